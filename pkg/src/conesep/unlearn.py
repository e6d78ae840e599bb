"""Targeted unlearning via masked entropic optimal transport.

The joint cost couples every composed query to all targets (left block) and
all negative compositions (right block). The mask severs a noisy sample's
path to its own target and a clean sample's path to its own negative, the
severed kernel entries are exact zeros, and the Sinkhorn plan is mixed with
corrected one-hot labels into the soft supervision for the KL loss.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, InfeasibleMaskError, ShapeMismatchError
from .losses import LossValue, finalize, intra_loss_node, robust_contrastive_node
from .model import ForwardOutputs
from .numeric import cosine_sim_matrix

SUPPORT_MODES = ("eq12_literal", "cost_support")

DEFAULT_EPS = 0.1
DEFAULT_MAX_ITERS = 20
DEFAULT_TOL = 1e-6


@dataclass
class MaskedCost:
    """B x 2B joint cost and its binary blocking mask (1 = severed path)."""

    cost: np.ndarray
    mask: np.ndarray

    @property
    def b(self) -> int:
        return self.cost.shape[0]


@dataclass
class TransportPlan:
    plan: np.ndarray  # B x 2B
    u: np.ndarray  # length B row marginals
    v: np.ndarray  # length 2B column marginals
    iterations: int
    residual: float
    converged: bool


@dataclass
class SoftLabel:
    y: np.ndarray  # B x 2B, rows sum to 1
    gamma: float


def build_cost_and_mask(f_c: np.ndarray, f_t: np.ndarray, f_neg: np.ndarray, partition) -> MaskedCost:
    """Joint cost [1 - cos(f_c, f_t) | 1 - cos(f_c, f_neg)] with the severing mask."""
    f_c = np.asarray(f_c, dtype=np.float64)
    if f_c.shape != np.shape(f_t) or f_c.shape != np.shape(f_neg):
        raise DimensionError(
            f"feature blocks disagree: {f_c.shape}, {np.shape(f_t)}, {np.shape(f_neg)}"
        )
    b = f_c.shape[0]
    cost = np.concatenate(
        [1.0 - cosine_sim_matrix(f_c, f_t), 1.0 - cosine_sim_matrix(f_c, f_neg)], axis=1
    )
    mask = np.zeros((b, 2 * b), dtype=np.uint8)
    noisy = np.asarray(partition.noisy_idx, dtype=int)
    clean = np.asarray(partition.clean_idx, dtype=int)
    mask[noisy, noisy] = 1  # noisy: block the path to the own target
    mask[clean, clean + b] = 1  # clean: block the path to the own negative
    return MaskedCost(cost=cost, mask=mask)


def sinkhorn(
    cost: MaskedCost,
    eps: float = DEFAULT_EPS,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> TransportPlan:
    """Alternating scaling on the Gibbs kernel exp(-C/eps) with exact masked zeros.

    Marginals are uniform: u = 1/B, v = 1/(2B). Stops when the max marginal
    violation drops below `tol`; a run that exhausts `max_iters` is returned
    with converged=False rather than raising.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    c = np.asarray(cost.cost, dtype=np.float64)
    mask = np.asarray(cost.mask, dtype=bool)
    if c.shape != mask.shape:
        raise DimensionError(f"cost {c.shape} vs mask {mask.shape}")
    rows, cols = c.shape

    kernel = np.where(mask, 0.0, np.exp(-c / eps))
    if np.any(~np.any(kernel > 0.0, axis=1)):
        raise InfeasibleMaskError(f"kernel row {int(np.argmin(np.any(kernel > 0, axis=1)))} is all zero")
    if np.any(~np.any(kernel > 0.0, axis=0)):
        raise InfeasibleMaskError(f"kernel column {int(np.argmin(np.any(kernel > 0, axis=0)))} is all zero")

    u = np.full(rows, 1.0 / rows)
    v = np.full(cols, 1.0 / cols)
    b_vec = np.ones(cols)
    a_vec = np.ones(rows)
    plan = kernel
    residual = np.inf
    iterations = 0
    for iterations in range(1, max_iters + 1):
        a_vec = u / (kernel @ b_vec)
        b_vec = v / (kernel.T @ a_vec)
        plan = a_vec[:, None] * kernel * b_vec[None, :]
        residual = max(
            np.abs(plan.sum(axis=1) - u).max(),
            np.abs(plan.sum(axis=0) - v).max(),
        )
        if residual < tol:
            break
    return TransportPlan(
        plan=plan,
        u=u,
        v=v,
        iterations=iterations,
        residual=float(residual),
        converged=bool(residual < tol),
    )


def hard_label(b: int, noisy_idx) -> np.ndarray:
    """One-hot rows: column i for clean rows, column i+B for noisy rows."""
    noisy = np.asarray(noisy_idx, dtype=int)
    if noisy.size and (noisy.min() < 0 or noisy.max() >= b):
        raise IndexError(f"noisy index out of range for batch of {b}")
    label = np.zeros((b, 2 * b))
    label[np.arange(b), np.arange(b)] = 1.0
    label[noisy, noisy] = 0.0
    label[noisy, noisy + b] = 1.0
    return label


def soft_label(plan: TransportPlan, label: np.ndarray, gamma: float) -> SoftLabel:
    """Y = gamma * rownorm(P) + (1 - gamma) * L.

    The plan's rows sum to 1/B at the fixed point; each row is normalized by
    its actual sum so Y stays row-stochastic even for plans returned slightly
    short of convergence.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    p = np.asarray(plan.plan, dtype=np.float64)
    if p.shape != np.shape(label):
        raise DimensionError(f"plan {p.shape} vs label {np.shape(label)}")
    row_sums = p.sum(axis=1, keepdims=True)
    if np.any(row_sums <= 0.0):
        raise ShapeMismatchError("transport plan has a zero row")
    y = gamma * (p / row_sums) + (1.0 - gamma) * np.asarray(label, dtype=np.float64)
    return SoftLabel(y=y, gamma=gamma)


def _prediction_logits(outs: ForwardOutputs, tau: float, support_mode: str) -> ad.Tensor:
    left = ad.matmul(outs.f_c, ad.transpose(outs.f_t))
    if support_mode == "eq12_literal":
        right = ad.matmul(outs.f_neg, ad.transpose(outs.f_t))
    elif support_mode == "cost_support":
        right = ad.matmul(outs.f_c, ad.transpose(outs.f_neg))
    else:
        raise ValueError(f"unknown support_mode {support_mode!r}; expected one of {SUPPORT_MODES}")
    return ad.scale(ad.concat_cols([left, right]), 1.0 / tau)


def unlearn_loss_node(outs: ForwardOutputs, y: np.ndarray, tau: float, support_mode: str = "eq12_literal") -> ad.Tensor:
    """Row-averaged KL(Y || softmax(Z)); zero exactly when predictions match Y."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    y = np.asarray(y, dtype=np.float64)
    b = outs.batch_size
    if y.shape != (b, 2 * b):
        raise DimensionError(f"soft label: expected {(b, 2 * b)}, got {y.shape}")
    if np.any(y.sum(axis=1) <= 0.0):
        raise ShapeMismatchError("soft label has a zero-sum row")
    log_pred = ad.log_softmax_rows(_prediction_logits(outs, tau, support_mode))
    entropy = float(np.sum(np.where(y > 0.0, y * np.log(np.where(y > 0.0, y, 1.0)), 0.0)))
    cross = ad.total(ad.mul(ad.const(y), log_pred))
    return ad.scale(ad.sub(ad.const(entropy), cross), 1.0 / b)


def unlearn_loss(outs: ForwardOutputs, y, tau: float, support_mode: str = "eq12_literal") -> LossValue:
    soft = y.y if isinstance(y, SoftLabel) else y
    return finalize(unlearn_loss_node(outs, soft, tau, support_mode), outs)


def final_objective(
    outs: ForwardOutputs,
    clean_idx,
    y,
    tau: float,
    kappa: float,
    zeta: float,
    support_mode: str = "eq12_literal",
) -> LossValue:
    """Joint phase composite: robust + kappa * unlearn + zeta * intra."""
    soft = y.y if isinstance(y, SoftLabel) else y
    rob = robust_contrastive_node(outs, tau)
    ul = unlearn_loss_node(outs, soft, tau, support_mode)
    intra = intra_loss_node(outs, clean_idx)
    node = ad.add(rob, ad.add(ad.scale(ul, kappa), ad.scale(intra, zeta)))
    components = {
        "l_robust": float(rob.value),
        "l_ul": float(ul.value),
        "l_intra": float(intra.value),
    }
    return finalize(node, outs, components)


# --- standalone solver file I/O -------------------------------------------

def write_matrix_csv(m: np.ndarray, path: str) -> None:
    """Matrix CSV: literal "rows,cols" header, a dims line, then the rows."""
    m = np.asarray(m, dtype=np.float64)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rows", "cols"])
        writer.writerow([m.shape[0], m.shape[1]])
        for row in m:
            writer.writerow([repr(float(x)) for x in row])
    os.replace(tmp, path)


def read_matrix_csv(path: str) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [r for r in reader if r]
    if len(rows) < 2 or [c.strip() for c in rows[0]] != ["rows", "cols"]:
        raise ShapeMismatchError(f"{path}: expected 'rows,cols' header")
    r, c = int(rows[1][0]), int(rows[1][1])
    if len(rows) != 2 + r:
        raise ShapeMismatchError(f"{path}: declared {r} rows, found {len(rows) - 2}")
    data = np.array([[float(x) for x in row] for row in rows[2:]], dtype=np.float64)
    if data.shape != (r, c):
        raise ShapeMismatchError(f"{path}: declared {(r, c)}, payload is {data.shape}")
    return data


def plan_summary(cost: MaskedCost, plan: TransportPlan, eps: float) -> dict:
    """One-line JSON payload for the standalone solver."""
    p = plan.plan
    transport = float(np.sum(np.where(cost.mask.astype(bool), 0.0, p * cost.cost)))
    entropy = float(-np.sum(np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)))
    return {
        "iterations": plan.iterations,
        "residual": plan.residual,
        "objective": transport - eps * entropy,
    }
