"""Retrieval and diagnostic metrics: recall, subset recall, purity, orthogonality."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numeric import cosine_sim_matrix


@dataclass
class PurityReport:
    precision: float
    recall: float
    f1: float
    real_positive: int  # clean-labeled, truly clean
    wrong_positive: int  # clean-labeled, actually noisy


def recall_at_k(queries: np.ndarray, gallery: np.ndarray, gt, ks) -> dict[int, float]:
    """Fraction of queries whose ground truth lands in the top-k by cosine.

    Ties are broken by lower gallery index, so a query's rank is the count of
    strictly better items plus the count of equal items at lower index.
    """
    gt = np.asarray(gt, dtype=int)
    sims = cosine_sim_matrix(queries, gallery)
    n_gallery = sims.shape[1]
    if gt.shape[0] != sims.shape[0] or (gt.size and (gt.min() < 0 or gt.max() >= n_gallery)):
        raise DimensionError("ground-truth indices do not match the gallery")
    gt_scores = sims[np.arange(sims.shape[0]), gt]
    better = (sims > gt_scores[:, None]).sum(axis=1)
    cols = np.arange(n_gallery)
    tied_before = ((sims == gt_scores[:, None]) & (cols[None, :] < gt[:, None])).sum(axis=1)
    ranks = better + tied_before
    return {int(k): float(np.mean(ranks < k)) for k in ks}


def subset_recall(queries, gallery, gt, candidate_sets, ks) -> dict[int, float]:
    """Recall with ranking restricted to each query's candidate set."""
    gt = np.asarray(gt, dtype=int)
    sims = cosine_sim_matrix(queries, gallery)
    ranks = np.empty(sims.shape[0], dtype=int)
    for i, candidates in enumerate(candidate_sets):
        cand = np.asarray(candidates, dtype=int)
        if gt[i] not in cand:
            raise ValueError(f"candidate set {i} does not contain its ground truth")
        order = cand[np.argsort(-sims[i, cand], kind="stable")]
        ranks[i] = int(np.flatnonzero(order == gt[i])[0])
    return {int(k): float(np.mean(ranks < k)) for k in ks}


def partition_purity(partition, noise_flags) -> PurityReport:
    """Confusion of the clean/noisy split against hidden flags (read-only).

    "Positive" is membership in the clean set, so precision is the purity of
    the clean set and real/wrong positives match the stacked-bar reading.
    """
    flags = np.asarray(noise_flags, dtype=bool)
    if flags.shape[0] != partition.scores.shape[0]:
        raise DimensionError("noise flags do not match the partition size")
    clean = np.zeros(flags.shape[0], dtype=bool)
    clean[np.asarray(partition.clean_idx, dtype=int)] = True
    tp = int(np.sum(clean & ~flags))
    fp = int(np.sum(clean & flags))
    fn = int(np.sum(~clean & ~flags))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PurityReport(precision, recall, f1, real_positive=tp, wrong_positive=fp)


def orthogonality_stats(f_c: np.ndarray, f_neg: np.ndarray, bins: int = 20) -> dict:
    """Stats of the diagonal cos(f_c_i, f_neg_i): mean, std, [-1, 1] histogram."""
    f_c = np.asarray(f_c, dtype=np.float64)
    f_neg = np.asarray(f_neg, dtype=np.float64)
    if f_c.shape != f_neg.shape:
        raise DimensionError(f"shape mismatch: {f_c.shape} vs {f_neg.shape}")
    norms_c = np.linalg.norm(f_c, axis=1)
    norms_n = np.linalg.norm(f_neg, axis=1)
    diag = np.einsum("ij,ij->i", f_c, f_neg) / (norms_c * norms_n)
    counts, edges = np.histogram(diag, bins=bins, range=(-1.0, 1.0))
    return {
        "mean": float(diag.mean()),
        "std": float(diag.std()),
        "histogram": counts.tolist(),
        "bin_edges": edges.tolist(),
    }
