"""Operator entry point: gen / train / ablate / eval / sinkhorn / report.

Config precedence is CLI flag > config file > built-in defaults, with the
CSEP_SEED environment variable overriding the seed last. Every command writes
a JSON manifest next to its primary output recording the resolved config, so
a run can be replayed exactly.

Exit codes: 0 ok, 2 bad flags or config, 3 missing input, 4 malformed file,
5 infeasible transport mask, 6 non-finite numerics.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, evalkit, unlearn
from .data import GenConfig, export_csv, generate, load, save
from .errors import (
    ConfigError,
    FormatError,
    InfeasibleMaskError,
    NonFiniteError,
)
from .model import forward, load_checkpoint, save_checkpoint
from .train import VARIANTS, TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_FOUND = 3
EXIT_FORMAT = 4
EXIT_INFEASIBLE = 5
EXIT_NUMERIC = 6


def _write_json(path: str, payload: dict) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _write_manifest(out_path: str, command: str, config: dict, seed: int, inputs: list[str], outputs: list[str], started: float) -> None:
    _write_json(
        f"{out_path}.manifest.json",
        {
            "command": command,
            "config": config,
            "seed": seed,
            "inputs": inputs,
            "outputs": outputs,
            "tool_version": __version__,
            "wall_time_s": time.time() - started,
        },
    )


def _apply_env_seed(seed: int) -> int:
    env = os.environ.get("CSEP_SEED")
    if env is None:
        return seed
    try:
        return int(env)
    except ValueError as err:
        raise ConfigError(f"CSEP_SEED must be an integer, got {env!r}") from err


def cmd_gen(args) -> int:
    started = time.time()
    cfg = GenConfig(
        n=args.n,
        d_raw=args.dim,
        clusters=args.clusters,
        sigma=args.noise,
        hard_fraction=args.hard,
        target_noise_scale=args.target_noise,
        seed=_apply_env_seed(args.seed),
    )
    cfg.validate()
    ds = generate(cfg)
    save(ds, args.out)
    outputs = [args.out]
    if args.csv:
        export_csv(ds, args.csv)
        outputs.append(args.csv)
    _write_manifest(args.out, "gen", vars(cfg).copy(), cfg.seed, [], outputs, started)
    print(f"wrote {args.out}: n={ds.n} d_raw={ds.d_raw} noisy={int(ds.noise_flag.sum())}")
    return EXIT_OK


def _resolve_train_config(args) -> TrainConfig:
    base: dict = {}
    if args.config:
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            base = json.load(fh)
        TrainConfig.from_dict(base)  # reject unknown keys before flag overlay
    overrides = {
        "epochs": args.epochs,
        "warmup_epochs": args.warmup_epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "tau": args.tau,
        "omega": args.omega,
        "gamma": args.gamma,
        "zeta": args.zeta,
        "nu": args.nu,
        "kappa": args.kappa,
        "k_samples": args.k_samples,
        "eps": args.eps,
        "dim": args.dim,
        "strategy": args.strategy,
        "fidelity_variant": args.fidelity_variant,
        "support_mode": args.support_mode,
        "seed": args.seed,
    }
    merged = dict(base)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    cfg = TrainConfig.from_dict(merged)
    cfg.seed = _apply_env_seed(cfg.seed)
    return cfg


def _run_training(args, variant: str, command: str) -> int:
    started = time.time()
    if not os.path.exists(args.data):
        raise FileNotFoundError(f"dataset not found: {args.data}")
    cfg = _resolve_train_config(args)
    ds = load(args.data)
    params, log = train(cfg, ds, variant=variant)

    ckpt = f"{args.out_prefix}.ckpt"
    metrics = f"{args.out_prefix}.metrics.jsonl"
    save_checkpoint(params, ckpt)
    log.save_jsonl(metrics)
    outputs = [ckpt, metrics]
    if args.metrics_csv:
        csv_path = f"{args.out_prefix}.metrics.csv"
        log.save_csv(csv_path)
        outputs.append(csv_path)
    manifest_cfg = cfg.to_dict()
    manifest_cfg["variant"] = variant
    _write_manifest(args.out_prefix, command, manifest_cfg, cfg.seed, [args.data], outputs, started)
    final = log.epochs[-1]
    print(f"trained {cfg.epochs} epochs (variant={variant}); final l_total={final.l_total:.6f}")
    return EXIT_OK


def cmd_train(args) -> int:
    return _run_training(args, args.variant, "train")


def cmd_ablate(args) -> int:
    return _run_training(args, args.variant, "ablate")


def cmd_eval(args) -> int:
    started = time.time()
    for path in (args.checkpoint, args.data):
        if not os.path.exists(path):
            raise FileNotFoundError(f"input not found: {path}")
    params = load_checkpoint(args.checkpoint)
    ds = load(args.data)
    ks = [int(k) for k in args.ks.split(",") if k]
    if not ks:
        raise ConfigError("--ks must list at least one cutoff")

    outs = forward(params, ds.ref, ds.mod, ds.tar)
    if args.queries == "clean":
        rows = np.flatnonzero(~ds.noise_flag)
        rows = rows if rows.size else np.arange(ds.n)
    else:
        rows = np.arange(ds.n)
    recall = evalkit.recall_at_k(outs.f_c.value[rows], outs.f_t.value, rows, ks)
    orth = evalkit.orthogonality_stats(outs.f_c.value, outs.f_neg.value, bins=args.bins)
    payload = {
        "recall": {str(k): v for k, v in recall.items()},
        "orthogonality": orth,
        "n_queries": int(rows.size),
        "gallery_size": int(ds.n),
    }
    _write_json(args.out, payload)
    _write_manifest(
        args.out,
        "eval",
        {"ks": ks, "queries": args.queries, "bins": args.bins},
        0,
        [args.checkpoint, args.data],
        [args.out],
        started,
    )
    print(json.dumps(payload["recall"], sort_keys=True))
    return EXIT_OK


def cmd_sinkhorn(args) -> int:
    started = time.time()
    if not os.path.exists(args.cost):
        raise FileNotFoundError(f"cost file not found: {args.cost}")
    cost = unlearn.read_matrix_csv(args.cost)
    if args.mask:
        if not os.path.exists(args.mask):
            raise FileNotFoundError(f"mask file not found: {args.mask}")
        mask = unlearn.read_matrix_csv(args.mask).astype(np.uint8)
    else:
        mask = np.zeros_like(cost, dtype=np.uint8)
    masked = unlearn.MaskedCost(cost=cost, mask=mask)
    plan = unlearn.sinkhorn(masked, eps=args.eps, max_iters=args.max_iters, tol=args.tol)
    unlearn.write_matrix_csv(plan.plan, args.out)
    summary = unlearn.plan_summary(masked, plan, args.eps)
    _write_json(args.summary, summary)
    _write_manifest(
        args.out,
        "sinkhorn",
        {"eps": args.eps, "max_iters": args.max_iters, "tol": args.tol},
        0,
        [args.cost] + ([args.mask] if args.mask else []),
        [args.out, args.summary],
        started,
    )
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    started = time.time()
    if not os.path.exists(args.metrics):
        raise FileNotFoundError(f"metrics file not found: {args.metrics}")
    epochs = []
    with open(args.metrics) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("record") == "epoch":
                epochs.append(rec)
    if not epochs:
        raise FormatError(f"{args.metrics}: no epoch records")

    ks = sorted({k for rec in epochs for k in rec.get("recall", {})}, key=int)
    cols = ["epoch", "phase", "l_total", "l_robust", "l_intra", "l_inter", "l_ul", "boundary",
            "clean_count", "noisy_count", "purity_precision", "orth_mean", "skipped_batches"]
    tmp = f"{args.out}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(",".join(cols + [f"recall_at_{k}" for k in ks]) + "\n")
        for rec in epochs:
            row = [rec.get(c) for c in cols] + [rec.get("recall", {}).get(k) for k in ks]
            fh.write(",".join("" if v is None else str(v) for v in row) + "\n")
    os.replace(tmp, args.out)
    _write_manifest(args.out, "report", {}, 0, [args.metrics], [args.out], started)
    print(json.dumps({"epochs": len(epochs), "final": epochs[-1]}, sort_keys=True))
    return EXIT_OK


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSEP dataset file")
    p.add_argument("--out-prefix", required=True, help="prefix for .ckpt / .metrics.jsonl")
    p.add_argument("--config", help="JSON config file (documented TrainConfig keys)")
    p.add_argument("--metrics-csv", action="store_true", help="also write metrics as CSV")
    p.add_argument("--epochs", type=int)
    p.add_argument("--warmup-epochs", type=int, dest="warmup_epochs")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--zeta", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--k-samples", type=int, dest="k_samples")
    p.add_argument("--eps", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--strategy", choices=["gaussian", "uniform", "laplace", "empirical"])
    p.add_argument("--fidelity-variant", choices=["literal", "smoothstep"], dest="fidelity_variant")
    p.add_argument("--support-mode", choices=["eq12_literal", "cost_support"], dest="support_mode")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csep", description="Robust noisy-triplet training pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic triplet dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, required=True, help="raw embedding dimension")
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.2, help="noise rate sigma in [0, 1)")
    p.add_argument("--hard", type=float, default=0.0, help="fraction of noisy triplets made hard")
    p.add_argument("--target-noise", type=float, default=0.05, dest="target_noise")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also export a CSV view")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="run the full two-phase training")
    _add_train_flags(p)
    p.add_argument("--variant", choices=list(VARIANTS), default="full")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="train with one mechanism disabled")
    _add_train_flags(p)
    p.add_argument("--variant", choices=list(VARIANTS), required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="retrieval metrics for a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ks", default="1,10")
    p.add_argument("--queries", choices=["clean", "all"], default="clean")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sinkhorn", help="standalone masked entropic-OT solve")
    p.add_argument("--cost", required=True, help="cost matrix CSV")
    p.add_argument("--mask", help="binary mask CSV (1 = blocked)")
    p.add_argument("--eps", type=float, default=unlearn.DEFAULT_EPS)
    p.add_argument("--max-iters", type=int, default=unlearn.DEFAULT_MAX_ITERS, dest="max_iters")
    p.add_argument("--tol", type=float, default=unlearn.DEFAULT_TOL)
    p.add_argument("--out", required=True, help="plan CSV path")
    p.add_argument("--summary", required=True, help="summary JSON path")
    p.set_defaults(func=cmd_sinkhorn)

    p = sub.add_parser("report", help="flatten a metrics JSONL into plot-ready CSV")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as err:
        print(f"error: invalid configuration: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"error: not found: {err}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except FormatError as err:
        print(f"error: malformed file: {err}", file=sys.stderr)
        return EXIT_FORMAT
    except InfeasibleMaskError as err:
        print(f"error: infeasible transport mask: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NonFiniteError as err:
        print(f"error: non-finite numerics: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
