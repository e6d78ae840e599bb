"""End-to-end acceptance gates.

Each test prints one PASS/FAIL line (run pytest with -s or check captured
output). Tolerances are fixed here and match the project's acceptance bar.
"""

import time

import numpy as np
import pytest

from conesep import (
    GenConfig,
    Rng,
    TrainConfig,
    build_cost_and_mask,
    fidelity,
    forward,
    generate,
    grad_check,
    hard_label,
    init_params,
    inter_loss,
    intra_loss,
    partition,
    robust_contrastive,
    sinkhorn,
    soft_label,
    train,
    unlearn_loss,
)
from conesep.cli import main as cli_main
from conesep.train import measure_partition_purity

from oracles import sinkhorn_log_domain


def report(number, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {number} {status}: {detail}")
    assert ok, detail


def random_instance(seed, b=8, dim=32):
    """Masked cost built exactly the way the training loop builds them."""
    rng = Rng(seed)
    features = (rng.normal(b, dim), rng.normal(b, dim), rng.normal(b, dim))
    split = partition(rng.uniform(1, b)[0], omega=0.0)
    return build_cost_and_mask(*features, split), split


@pytest.fixture(scope="module")
def solver_suite():
    """100 random feasible 8x16 instances solved once, shared by criteria 1-2."""
    plans = []
    started = time.perf_counter()
    for seed in range(100):
        cost, _ = random_instance(seed)
        plans.append((cost, sinkhorn(cost, eps=0.1, max_iters=100, tol=1e-6)))
    return plans, time.perf_counter() - started


def test_01_sinkhorn_feasibility(solver_suite):
    plans, elapsed = solver_suite
    worst = max(plan.residual for _, plan in plans)
    iters = max(plan.iterations for _, plan in plans)
    ok = all(plan.converged for _, plan in plans) and worst < 1e-6 and elapsed < 2.0
    report(1, ok, f"100 instances, max residual {worst:.2e}, max iters {iters}, {elapsed:.2f}s")


def test_02_mask_enforcement(solver_suite):
    plans, _ = solver_suite
    leak = max(float(plan.plan[cost.mask.astype(bool)].max()) for cost, plan in plans)
    report(2, leak <= 1e-12, f"largest masked-cell mass {leak:.2e} (bound 1e-12)")


def test_03_solver_oracle_equivalence():
    worst = 0.0
    for seed in range(50):
        cost, _ = random_instance(1000 + seed, b=3)
        plan = sinkhorn(cost, eps=0.1, max_iters=200, tol=0.0)
        reference = sinkhorn_log_domain(cost.cost, cost.mask, eps=0.1, iters=200)
        worst = max(worst, float(np.abs(plan.plan - reference).max()))
    report(3, worst < 1e-8, f"50 instances, max |scaling - log-domain| = {worst:.2e}")


def _kink_free(params, batch, margin=1e-3):
    outs = forward(params, *batch)
    s_n = np.einsum("ij,ij->i", outs.f_c.value, outs.f_neg.value)
    neg, pos = s_n[s_n < 0], s_n[s_n > 0]
    a1 = neg.mean() if neg.size else -0.1
    a2 = pos.mean() if pos.size else 0.1
    args = np.concatenate([s_n + a1, -a2 - s_n, s_n])
    return bool(np.all(np.abs(args) > margin))


def test_04_gradient_contract():
    b, d_raw, dim, tau = 4, 4, 6, 0.07
    losses = {
        "robust": lambda o, y: robust_contrastive(o, tau),
        "inter": lambda o, y: inter_loss(o, [0, 2], tau),
        "intra": lambda o, y: intra_loss(o, [0, 1, 3]),
        "unlearn_literal": lambda o, y: unlearn_loss(o, y, tau, "eq12_literal"),
        "unlearn_cost": lambda o, y: unlearn_loss(o, y, tau, "cost_support"),
    }
    worst = {}
    for name, loss_fn in losses.items():
        errs = []
        seed = 0
        while len(errs) < 20:
            seed += 1
            rng = Rng(hash(name) % 100000 + seed)
            params = init_params(d_raw, dim, rng)
            batch = (rng.normal(b, d_raw), rng.normal(b, d_raw), rng.normal(b, d_raw))
            if name == "intra" and not _kink_free(params, batch):
                continue  # criterion excludes hinge-boundary draws
            y = np.random.default_rng(seed).dirichlet(np.ones(2 * b), size=b)
            errs.append(grad_check(params, batch, lambda o: loss_fn(o, y)))
        worst[name] = max(errs)
    bad = {k: v for k, v in worst.items() if v >= 1e-4}
    detail = ", ".join(f"{k}={v:.2e}" for k, v in worst.items())
    report(4, not bad, f"20 instances per loss, worst rel errors: {detail}")


def test_05_soft_label_stochasticity():
    worst = 0.0
    for gamma in (0.0, 0.3, 0.7, 1.0):
        for seed in range(10):
            cost, split = random_instance(2000 + seed)
            plan = sinkhorn(cost, eps=0.1, max_iters=100, tol=1e-6)
            label = soft_label(plan, hard_label(cost.b, split.noisy_idx), gamma)
            worst = max(worst, float(np.abs(label.y.sum(axis=1) - 1.0).max()))
    report(5, worst < 1e-9, f"gamma in {{0, 0.3, 0.7, 1.0}}, max |row sum - 1| = {worst:.2e}")


BENCHMARK_TRAIN = dict(
    epochs=32,
    warmup_epochs=16,
    batch_size=128,
    dim=32,
    zeta=0.0,
    nu=0.0,
    omega=0.4,
    gamma=0.02,
    kappa=0.1,
)


def test_06_noise_robustness_trend():
    started = time.perf_counter()
    full_scores, ablation_scores = [], []
    for seed in (1, 2, 3, 4, 5):
        ds = generate(
            GenConfig(
                n=2000, d_raw=16, clusters=8, sigma=0.5,
                hard_fraction=1.0, target_noise_scale=0.25, seed=seed,
            )
        )
        cfg = TrainConfig(seed=seed, **BENCHMARK_TRAIN)
        _, log_full = train(cfg, ds, variant="full")
        _, log_ablation = train(cfg, ds, variant="robust_only")
        full_scores.append(log_full.epochs[-1].recall[10])
        ablation_scores.append(log_ablation.epochs[-1].recall[10])
    elapsed = time.perf_counter() - started
    mean_full, mean_ablation = float(np.mean(full_scores)), float(np.mean(ablation_scores))
    ok = mean_full > mean_ablation and elapsed < 300.0
    report(
        6,
        ok,
        f"sigma=0.5, 5 seeds: full R@10 {mean_full:.4f} vs robust_only {mean_ablation:.4f}, {elapsed:.0f}s",
    )


def test_07_partition_purity():
    precrayons = []
    for seed in (1, 2, 3):
        ds = generate(GenConfig(n=1000, d_raw=16, clusters=8, sigma=0.2, hard_fraction=0.0, seed=seed))
        cfg = TrainConfig(
            epochs=13, warmup_epochs=12, batch_size=128, dim=32, seed=seed, zeta=0.0, nu=0.0
        )
        params, _ = train(cfg, ds, variant="no_btu")  # warm-up objective only
        precrayons.append(measure_partition_purity(params, ds, cfg).precision)
    mean_precision = float(np.mean(precrayons))
    report(7, mean_precision >= 0.85, f"clean-set precision after warm-up: {mean_precision:.3f} (>= 0.85)")


def test_08_orthogonality_after_training():
    ds = generate(GenConfig(n=512, d_raw=16, clusters=8, sigma=0.0, seed=7))
    cfg = TrainConfig(epochs=20, warmup_epochs=3, batch_size=128, dim=32, seed=7)
    params, log = train(cfg, ds, variant="full")
    mean_orth = log.epochs[-1].orth_mean
    report(8, -0.15 <= mean_orth <= 0.15, f"mean diag cos(f_c, f_neg) = {mean_orth:+.4f} in [-0.15, 0.15]")


def test_09_training_determinism(tmp_path):
    data = tmp_path / "d.csep"
    assert cli_main(["gen", "--n", "96", "--dim", "8", "--clusters", "4", "--noise", "0.2",
                     "--seed", "5", "--out", str(data)]) == 0
    for prefix in ("one", "two"):
        rc = cli_main(["train", "--data", str(data), "--out-prefix", str(tmp_path / prefix),
                       "--epochs", "4", "--warmup-epochs", "2", "--batch-size", "32",
                       "--dim", "8", "--seed", "9"])
        assert rc == 0
    same_metrics = (tmp_path / "one.metrics.jsonl").read_bytes() == (tmp_path / "two.metrics.jsonl").read_bytes()
    same_ckpt = (tmp_path / "one.ckpt").read_bytes() == (tmp_path / "two.ckpt").read_bytes()
    report(9, same_metrics and same_ckpt, "repeated train runs byte-identical (metrics and checkpoint)")


def test_10_fidelity_semantics():
    at_boundary = fidelity(0.37, 0.37, "literal")
    at_half = fidelity(0.5, 0.0, "literal")
    exact = at_boundary == 0.0 and at_half == pytest.approx(-0.125, abs=1e-15)

    gen = np.random.default_rng(123)
    monotone = True
    for _ in range(10_000):
        boundary = gen.uniform(-1, 1)
        s1, s2 = sorted(gen.uniform(-1, 1, size=2))
        if fidelity(s1, boundary, "smoothstep") > fidelity(s2, boundary, "smoothstep"):
            monotone = False
            break
    report(
        10,
        exact and monotone,
        f"literal: f(B)=0, f(x=0.5)={at_half}; smoothstep monotone on 10^4 random pairs: {monotone}",
    )
