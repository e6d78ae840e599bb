"""Negative-boundary losses: robust alignment, target/query shaping, warm-up mix.

Every public loss returns a :class:`LossValue` whose gradients cover every
parameter block, obtained by one reverse sweep over the graph built from a
:class:`~conesep.model.ForwardOutputs`. Composite objectives sum graph nodes
before the sweep, so their gradients are exact weighted sums of the parts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import NonFiniteError
from .model import PARAM_FIELDS, ForwardOutputs

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-12
ALPHA_NEG_FALLBACK = -0.1
ALPHA_POS_FALLBACK = 0.1


@dataclass
class LossValue:
    """Scalar loss plus gradient for every parameter block."""

    value: float
    grads: dict[str, np.ndarray]
    components: dict[str, float] = field(default_factory=dict)


def finalize(node: ad.Tensor, outs: ForwardOutputs, components: dict[str, float] | None = None) -> LossValue:
    """Backward from `node` and package per-parameter gradients."""
    value = float(node.value)
    if not np.isfinite(value):
        raise NonFiniteError(f"loss value is not finite: {value}")
    gmap = ad.backward(node)
    grads = {}
    for name in PARAM_FIELDS:
        t = outs.param_tensors[name]
        g = gmap.get(id(t))
        grads[name] = np.zeros_like(t.value) if g is None else g
    return LossValue(value, grads, components or {})


def robust_contrastive_node(outs: ForwardOutputs, tau: float) -> ad.Tensor:
    """-(1/B) sum_{i, j != i} log(1 - softmax_j(cos(f_c_i, f_t_j)/tau))."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    b = outs.batch_size
    if b == 1:
        return ad.const(0.0)  # no off-diagonal terms
    logits = ad.scale(ad.matmul(outs.f_c, ad.transpose(outs.f_t)), 1.0 / tau)
    p = ad.exp(ad.log_softmax_rows(logits))
    one_minus_p = ad.sub(ad.const(np.ones((b, b))), p)
    off_diag = 1.0 - np.eye(b)
    if np.any((one_minus_p.value < PROB_CLAMP) & (off_diag > 0)):
        logger.warning("robust_contrastive: off-diagonal probability hit 1, clamping")
    safe = ad.clip_min(one_minus_p, PROB_CLAMP)
    summed = ad.total(ad.mul(ad.log(safe), ad.const(off_diag)))
    return ad.scale(summed, -1.0 / b)


def robust_contrastive(outs: ForwardOutputs, tau: float) -> LossValue:
    return finalize(robust_contrastive_node(outs, tau), outs)


def _clean_row_mask(b: int, clean_idx) -> np.ndarray:
    mask = np.zeros(b)
    mask[np.asarray(clean_idx, dtype=int)] = 1.0
    return mask


def inter_loss_node(outs: ForwardOutputs, clean_idx, tau: float) -> ad.Tensor:
    """Push f_neg away from its own target and toward every other target.

    sum_{i in clean} sum_j softplus(T_ij * cos(f_neg_i, f_t_j) / tau)
    normalized by |clean| * B, with T = +1 on the diagonal, -1 elsewhere.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    clean_idx = np.asarray(clean_idx, dtype=int)
    if clean_idx.size == 0:
        logger.warning("inter_loss: empty clean set, returning 0")
        return ad.const(0.0)
    b = outs.batch_size
    target_sign = 2.0 * np.eye(b) - 1.0
    z = ad.scale(ad.mul(ad.matmul(outs.f_neg, ad.transpose(outs.f_t)), ad.const(target_sign)), 1.0 / tau)
    terms = ad.softplus(z)
    row_mask = _clean_row_mask(b, clean_idx)[:, None]
    summed = ad.total(ad.mul(terms, ad.const(row_mask)))
    return ad.scale(summed, 1.0 / (clean_idx.size * b))


def inter_loss(outs: ForwardOutputs, clean_idx, tau: float) -> LossValue:
    return finalize(inter_loss_node(outs, clean_idx, tau), outs)


def intra_loss_node(outs: ForwardOutputs, clean_idx) -> ad.Tensor:
    """Keep cos(f_c_i, f_neg_i) inside a batch-derived interval around zero.

    Per clean sample: relu(s_n + a1) + relu(-a2 - s_n), where a1 is the mean
    of the negative diagonal similarities over the whole batch and a2 the mean
    of the positive ones (fallbacks -0.1 / +0.1 when a side is empty). The
    subset masks are frozen at current values; the means themselves stay in
    the graph.
    """
    clean_idx = np.asarray(clean_idx, dtype=int)
    if clean_idx.size == 0:
        logger.warning("intra_loss: empty clean set, returning 0")
        return ad.const(0.0)
    b = outs.batch_size
    s_n = ad.row_sum(ad.mul(outs.f_c, outs.f_neg))  # rows are unit-norm, so dot = cos

    vals = s_n.value
    neg_mask = vals < 0.0
    pos_mask = vals > 0.0
    if neg_mask.any():
        alpha1 = ad.scale(ad.total(ad.mul(s_n, ad.const(neg_mask.astype(float)))), 1.0 / neg_mask.sum())
    else:
        alpha1 = ad.const(ALPHA_NEG_FALLBACK)
    if pos_mask.any():
        alpha2 = ad.scale(ad.total(ad.mul(s_n, ad.const(pos_mask.astype(float)))), 1.0 / pos_mask.sum())
    else:
        alpha2 = ad.const(ALPHA_POS_FALLBACK)

    upper_hinge = ad.relu(ad.add(s_n, alpha1))
    lower_hinge = ad.relu(ad.neg(ad.add(s_n, alpha2)))
    per_sample = ad.add(upper_hinge, lower_hinge)
    summed = ad.total(ad.mul(per_sample, ad.const(_clean_row_mask(b, clean_idx))))
    return ad.scale(summed, 1.0 / clean_idx.size)


def intra_loss(outs: ForwardOutputs, clean_idx) -> LossValue:
    return finalize(intra_loss_node(outs, clean_idx), outs)


def warmup_objective(
    outs: ForwardOutputs,
    clean_idx,
    tau: float,
    zeta: float,
    nu: float,
) -> LossValue:
    """Warm-up composite: robust + zeta * intra + nu * inter."""
    rob = robust_contrastive_node(outs, tau)
    intra = intra_loss_node(outs, clean_idx)
    inter = inter_loss_node(outs, clean_idx, tau)
    node = ad.add(rob, ad.add(ad.scale(intra, zeta), ad.scale(inter, nu)))
    components = {
        "l_robust": float(rob.value),
        "l_intra": float(intra.value),
        "l_inter": float(inter.value),
    }
    return finalize(node, outs, components)
