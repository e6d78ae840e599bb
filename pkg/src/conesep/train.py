"""Two-phase training loop: negative-boundary warm-up, then joint OT unlearning.

Every batch is forwarded, boundary-scored, and partitioned; the first N epochs
optimize the warm-up composite, the rest build the masked cost, solve the
transport plan, and optimize the joint objective. Hidden noise flags are read
only to log purity, never to steer training.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import evalkit, gfq, losses, unlearn
from .data import TripletDataset
from .errors import ConfigError, InfeasibleMaskError, NonFiniteError
from .model import ModelParams, adam_init, forward, init_params, optimizer_step
from .numeric import Rng

logger = logging.getLogger(__name__)

VARIANTS = ("full", "robust_only", "no_gfq", "no_btu", "no_neg")

# rng stream tags
_TAG_INIT = 0
_TAG_SHUFFLE = 1
_TAG_BOUNDARY = 2


@dataclass
class TrainConfig:
    epochs: int = 20
    warmup_epochs: int = 3
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 0.0
    tau: float = 0.07
    omega: float = 0.5
    gamma: float = 0.7
    zeta: float = 0.5
    nu: float = 0.5
    kappa: float = 0.5
    k_samples: int = 4
    eps: float = 0.1
    ot_max_iters: int = 100
    ot_tol: float = 1e-6
    dim: int = 32
    strategy: str = "gaussian"
    fidelity_variant: str = "smoothstep"
    support_mode: str = "eq12_literal"
    boundary_refresh: str = "batch"
    eval_ks: tuple[int, ...] = (1, 10)
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.warmup_epochs < self.epochs:
            raise ConfigError(
                f"need 0 < warmup_epochs < epochs, got {self.warmup_epochs} / {self.epochs}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.tau <= 0 or self.eps <= 0:
            raise ConfigError("tau and eps must be positive")
        for name in ("zeta", "nu", "kappa", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.k_samples < 1:
            raise ConfigError(f"k_samples must be >= 1, got {self.k_samples}")
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.strategy not in gfq.STRATEGIES:
            raise ConfigError(f"strategy must be one of {gfq.STRATEGIES}")
        if self.fidelity_variant not in gfq.FIDELITY_VARIANTS:
            raise ConfigError(f"fidelity_variant must be one of {gfq.FIDELITY_VARIANTS}")
        if self.support_mode not in unlearn.SUPPORT_MODES:
            raise ConfigError(f"support_mode must be one of {unlearn.SUPPORT_MODES}")
        if self.boundary_refresh not in ("batch", "epoch"):
            raise ConfigError("boundary_refresh must be 'batch' or 'epoch'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval_ks"] = list(self.eval_ks)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.eval_ks = tuple(int(k) for k in cfg.eval_ks)
        cfg.validate()
        return cfg


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    l_total: float | None = None
    l_robust: float | None = None
    l_intra: float | None = None
    l_inter: float | None = None
    l_ul: float | None = None
    boundary: float | None = None
    clean_count: int | None = None
    noisy_count: int | None = None
    purity_precision: float | None = None
    purity_recall: float | None = None
    recall: dict = field(default_factory=dict)
    orth_mean: float | None = None
    skipped_batches: int = 0
    ot_unconverged: int = 0


@dataclass
class MetricLog:
    config: dict
    seed: int
    variant: str
    epochs: list[EpochRecord] = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {"record": "run", "config": self.config, "seed": self.seed, "variant": self.variant},
                sort_keys=True,
            )
        ]
        for rec in self.epochs:
            payload = {"record": "epoch", **asdict(rec)}
            payload["recall"] = {str(k): v for k, v in rec.recall.items()}
            lines.append(json.dumps(payload, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save_jsonl(self, path: str) -> None:
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "w") as fh:
            fh.write(self.to_jsonl())
        os.replace(tmp, path)

    def save_csv(self, path: str) -> None:
        ks = sorted({k for rec in self.epochs for k in rec.recall})
        cols = [f.name for f in fields(EpochRecord) if f.name != "recall"]
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols + [f"recall_at_{k}" for k in ks])
            for rec in self.epochs:
                row = [getattr(rec, c) for c in cols]
                row += [rec.recall.get(k) for k in ks]
                writer.writerow(["" if v is None else v for v in row])
        os.replace(tmp, path)


def _mean_or_none(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def _evaluate_epoch(params: ModelParams, dataset: TripletDataset, cfg: TrainConfig) -> tuple[dict, float]:
    """Retrieval over the full gallery with clean-flagged queries, plus orthogonality."""
    outs = forward(params, dataset.ref, dataset.mod, dataset.tar)
    clean_rows = np.flatnonzero(~dataset.noise_flag)
    if clean_rows.size == 0:
        clean_rows = np.arange(dataset.n)
    recall = evalkit.recall_at_k(
        outs.f_c.value[clean_rows], outs.f_t.value, clean_rows, cfg.eval_ks
    )
    orth = evalkit.orthogonality_stats(outs.f_c.value, outs.f_neg.value)
    return recall, orth["mean"]


def train(
    cfg: TrainConfig,
    dataset: TripletDataset,
    variant: str = "full",
) -> tuple[ModelParams, MetricLog]:
    """Run the two-phase schedule and return final parameters plus the log."""
    cfg.validate()
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if dataset.n == 0:
        raise ConfigError("dataset is empty")

    master = Rng(cfg.seed)
    params = init_params(dataset.d_raw, cfg.dim, master.derive(_TAG_INIT))
    opt_state = adam_init(params)
    log = MetricLog(config=cfg.to_dict(), seed=cfg.seed, variant=variant)

    use_gfq = variant not in ("robust_only", "no_gfq")
    for epoch in range(1, cfg.epochs + 1):
        warm_phase = epoch <= cfg.warmup_epochs or variant == "no_btu"
        order = master.derive(_TAG_SHUFFLE, epoch).permutation(dataset.n)
        epoch_boundary: gfq.BoundaryEstimate | None = None

        sums: dict[str, list[float]] = {k: [] for k in ("l_total", "l_robust", "l_intra", "l_inter", "l_ul")}
        boundaries: list[float] = []
        clean_count = noisy_count = 0
        tp = fp = fn = 0
        skipped = unconverged = 0

        for batch_index, start in enumerate(range(0, dataset.n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            refs, mods, tars = dataset.ref[idx], dataset.mod[idx], dataset.tar[idx]
            b = idx.size
            outs = forward(params, refs, mods, tars)

            if variant == "robust_only":
                part = None
                clean_idx = np.arange(b)
            elif not use_gfq:  # no_gfq: everything treated clean
                part = gfq.partition(np.ones(b), cfg.omega)
                clean_idx = part.clean_idx
            else:
                if cfg.boundary_refresh == "epoch" and epoch_boundary is not None:
                    boundary = epoch_boundary
                else:
                    boundary = gfq.estimate_boundary(
                        params,
                        (refs, mods, tars),
                        cfg.k_samples,
                        cfg.strategy,
                        master.derive(_TAG_BOUNDARY, epoch, batch_index),
                    )
                    epoch_boundary = boundary
                sims = np.einsum("ij,ij->i", outs.f_c.value, outs.f_t.value)
                scores = gfq.fidelity(sims, boundary.value, cfg.fidelity_variant)
                part = gfq.partition(scores, cfg.omega)
                clean_idx = part.clean_idx
                boundaries.append(boundary.value)

            if part is not None:
                clean_count += part.clean_idx.size
                noisy_count += part.noisy_idx.size
                batch_flags = dataset.noise_flag[idx]  # evaluation-only read
                purity = evalkit.partition_purity(part, batch_flags)
                tp += purity.real_positive
                fp += purity.wrong_positive
                fn += int(np.sum(~batch_flags)) - purity.real_positive

            try:
                if variant == "robust_only":
                    lv = losses.robust_contrastive(outs, cfg.tau)
                    lv.components = {"l_robust": lv.value}
                elif warm_phase:
                    lv = losses.warmup_objective(outs, clean_idx, cfg.tau, cfg.zeta, cfg.nu)
                else:
                    noisy_idx = part.noisy_idx if part is not None else np.array([], dtype=int)
                    label = unlearn.hard_label(b, noisy_idx)
                    if variant == "no_neg":
                        y = unlearn.SoftLabel(y=label, gamma=0.0)
                    else:
                        masked = unlearn.build_cost_and_mask(
                            outs.f_c.value, outs.f_t.value, outs.f_neg.value, part
                        )
                        plan = unlearn.sinkhorn(masked, cfg.eps, cfg.ot_max_iters, cfg.ot_tol)
                        if not plan.converged:
                            unconverged += 1
                        y = unlearn.soft_label(plan, label, cfg.gamma)
                    lv = unlearn.final_objective(
                        outs, clean_idx, y, cfg.tau, cfg.kappa, cfg.zeta, cfg.support_mode
                    )
            except InfeasibleMaskError as err:
                skipped += 1
                logger.warning("epoch %d batch %d: %s (batch skipped)", epoch, batch_index, err)
                continue
            except NonFiniteError as err:
                raise NonFiniteError(f"epoch {epoch} batch {batch_index}: {err}") from err

            sums["l_total"].append(lv.value)
            for key in ("l_robust", "l_intra", "l_inter", "l_ul"):
                if key in lv.components:
                    sums[key].append(lv.components[key])
            params = optimizer_step(params, lv.grads, opt_state, cfg.lr, cfg.weight_decay)

        recall, orth_mean = _evaluate_epoch(params, dataset, cfg)
        log.epochs.append(
            EpochRecord(
                epoch=epoch,
                phase="warmup" if warm_phase else "btu",
                l_total=_mean_or_none(sums["l_total"]),
                l_robust=_mean_or_none(sums["l_robust"]),
                l_intra=_mean_or_none(sums["l_intra"]),
                l_inter=_mean_or_none(sums["l_inter"]),
                l_ul=_mean_or_none(sums["l_ul"]),
                boundary=_mean_or_none(boundaries),
                clean_count=clean_count if use_gfq or variant == "no_gfq" else None,
                noisy_count=noisy_count if use_gfq or variant == "no_gfq" else None,
                purity_precision=(tp / (tp + fp)) if (tp + fp) else None,
                purity_recall=(tp / (tp + fn)) if (tp + fn) else None,
                recall=recall,
                orth_mean=orth_mean,
                skipped_batches=skipped,
                ot_unconverged=unconverged,
            )
        )
    return params, log


def ablate(cfg: TrainConfig, dataset: TripletDataset, variant: str) -> MetricLog:
    """Train with one mechanism disabled; `full` is identical to plain train."""
    _, log = train(cfg, dataset, variant=variant)
    return log


def measure_partition_purity(
    params: ModelParams, dataset: TripletDataset, cfg: TrainConfig
) -> evalkit.PurityReport:
    """Fidelity-partition the whole dataset batch-wise and score it against flags."""
    rng = Rng(cfg.seed).derive(_TAG_BOUNDARY, 0)
    tp = fp = fn = 0
    for start in range(0, dataset.n, cfg.batch_size):
        sl = slice(start, start + cfg.batch_size)
        refs, mods, tars = dataset.ref[sl], dataset.mod[sl], dataset.tar[sl]
        outs = forward(params, refs, mods, tars)
        boundary = gfq.estimate_boundary(params, (refs, mods, tars), cfg.k_samples, cfg.strategy, rng)
        sims = np.einsum("ij,ij->i", outs.f_c.value, outs.f_t.value)
        part = gfq.partition(gfq.fidelity(sims, boundary.value, cfg.fidelity_variant), cfg.omega)
        flags = dataset.noise_flag[sl]
        report = evalkit.partition_purity(part, flags)
        tp += report.real_positive
        fp += report.wrong_positive
        fn += int(np.sum(~flags)) - report.real_positive
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return evalkit.PurityReport(precision, recall, f1, real_positive=tp, wrong_positive=fp)
