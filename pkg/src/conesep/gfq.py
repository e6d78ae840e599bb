"""Geometric fidelity quantization: boundary estimation, scoring, partition.

The boundary is the mean cosine similarity of deliberately mismatched
query/target pairs; it marks the similarity level of pure chance. Samples are
scored by how far their own query/target similarity sits above it and split
into clean and noisy sets at a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .model import ModelParams, forward
from .numeric import Rng, sample_matrix

STRATEGIES = ("gaussian", "uniform", "laplace", "empirical")
FIDELITY_VARIANTS = ("literal", "smoothstep")


@dataclass
class BoundaryEstimate:
    value: float
    strategy: str
    k: int


@dataclass
class FidelityPartition:
    scores: np.ndarray
    clean_idx: np.ndarray
    noisy_idx: np.ndarray
    omega: float


def estimate_boundary(
    params: ModelParams,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray],
    k: int,
    strategy: str,
    rng: Rng,
) -> BoundaryEstimate:
    """Mean cos(f_c, f_t) over k synthetic reference/target pairs.

    Reference and target raw embeddings are drawn from `strategy` (the
    empirical strategy resamples shuffled rows of the current batch); each
    pair is completed with a modification row sampled uniformly from the
    batch, then pushed through the model.
    """
    refs, mods, tars = batch
    refs = np.asarray(refs, dtype=np.float64)
    b = refs.shape[0]
    if b == 0:
        raise DimensionError("estimate_boundary: empty batch")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")

    d = refs.shape[1]
    if strategy == "empirical":
        syn_ref = refs[rng.choice(b, k)]
        syn_tar = np.asarray(tars, dtype=np.float64)[rng.choice(b, k)]
    else:
        syn_ref = sample_matrix(rng, k, d, strategy)
        syn_tar = sample_matrix(rng, k, d, strategy)
    syn_mod = np.asarray(mods, dtype=np.float64)[rng.choice(b, k)]

    outs = forward(params, syn_ref, syn_mod, syn_tar)
    sims = np.einsum("ij,ij->i", outs.f_c.value, outs.f_t.value)
    return BoundaryEstimate(value=float(sims.mean()), strategy=strategy, k=k)


def fidelity(s_ct, boundary: float, variant: str = "smoothstep"):
    """Score similarshape s_ct against the boundary.

    Both variants act on x = clip(s_ct - boundary, 0, 1). The literal cubic
    x^2 * (x - 1) is nonpositive on [0, 1]; the default smoothstep
    3x^2 - 2x^3 rises monotonically from 0 to 1 and is the form compatible
    with a 0.5 threshold.
    """
    if variant not in FIDELITY_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {FIDELITY_VARIANTS}")
    s = np.asarray(s_ct, dtype=np.float64)
    x = np.clip(s - boundary, 0.0, 1.0)
    if variant == "literal":
        out = x * x * (x - 1.0)
    else:
        out = x * x * (3.0 - 2.0 * x)
    return float(out) if np.isscalar(s_ct) else out


def partition(scores, omega: float) -> FidelityPartition:
    """Threshold split: clean iff score >= omega; original order kept in each set."""
    if not np.isfinite(omega):
        raise ValueError(f"omega must be finite, got {omega}")
    scores = np.asarray(scores, dtype=np.float64)
    clean = np.flatnonzero(scores >= omega)
    noisy = np.flatnonzero(scores < omega)
    return FidelityPartition(scores=scores, clean_idx=clean, noisy_idx=noisy, omega=omega)
