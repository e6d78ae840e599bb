"""Synthetic noisy-triplet datasets and the CSEP binary container.

The generative model: reference embeddings are drawn from a Gaussian mixture
(one component per cluster), modifications are standard normal, and each clean
target is a fixed seeded linear map of [ref; mod] plus small Gaussian noise.
The map's reference block is identity-dominant so that a target stays
geometrically close to its own reference; that is what makes within-cluster
target shuffling produce "hard" noise (high ref/tar similarity, wrong
modification) and cross-cluster shuffling produce plain noise.

Noise flags record ground truth. They exist for evaluation only and must
never feed the fidelity partition or any training path.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    ShapeMismatchError,
    TruncatedError,
    VersionError,
)
from .numeric import Rng

MAGIC = b"CSEP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHQII")

CENTER_SPREAD = 2.0
WITHIN_CLUSTER_STD = 0.1
REF_MAP_PERTURB = 0.05
MOD_MAP_SCALE = 0.5


@dataclass
class GenConfig:
    """Knobs for one synthetic dataset."""

    n: int = 1000
    d_raw: int = 16
    clusters: int = 8
    sigma: float = 0.2
    hard_fraction: float = 0.0
    target_noise_scale: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.d_raw < 1:
            raise ConfigError(f"d_raw must be >= 1, got {self.d_raw}")
        if self.clusters < 1:
            raise ConfigError(f"clusters must be >= 1, got {self.clusters}")
        if not 0.0 <= self.sigma < 1.0:
            raise ConfigError(f"sigma must be in [0, 1), got {self.sigma}")
        if not 0.0 <= self.hard_fraction <= 1.0:
            raise ConfigError(f"hard_fraction must be in [0, 1], got {self.hard_fraction}")
        if self.target_noise_scale < 0.0:
            raise ConfigError(f"target_noise_scale must be >= 0, got {self.target_noise_scale}")
        if self.hard_fraction > 0.0 and self.clusters < 2:
            raise ConfigError("hard_fraction > 0 requires clusters >= 2")


@dataclass
class TripletDataset:
    """Aligned raw embeddings plus hidden ground-truth noise flags."""

    ref: np.ndarray  # n x d_raw
    mod: np.ndarray  # n x d_raw
    tar: np.ndarray  # n x d_raw
    noise_flag: np.ndarray  # n bool
    hard_flag: np.ndarray  # n bool
    cluster_id: np.ndarray  # n uint32

    @property
    def n(self) -> int:
        return self.ref.shape[0]

    @property
    def d_raw(self) -> int:
        return self.ref.shape[1]

    @property
    def clusters(self) -> int:
        return int(self.cluster_id.max()) + 1 if self.n else 0


def generate(cfg: GenConfig) -> TripletDataset:
    """Build one seeded dataset with sigma noise and the requested hard fraction."""
    cfg.validate()
    rng = Rng(cfg.seed)
    n, d = cfg.n, cfg.d_raw

    centers = rng.normal(cfg.clusters, d) * CENTER_SPREAD
    cluster_id = np.asarray(rng.integers(0, cfg.clusters, size=n), dtype=np.uint32)
    ref = centers[cluster_id] + WITHIN_CLUSTER_STD * rng.normal(n, d)
    mod = rng.normal(n, d)

    ref_map = np.eye(d) + REF_MAP_PERTURB * rng.normal(d, d) / np.sqrt(d)
    mod_map = MOD_MAP_SCALE * rng.normal(d, d) / np.sqrt(d)
    tar = ref @ ref_map.T + mod @ mod_map.T + cfg.target_noise_scale * rng.normal(n, d)
    clean_tar = tar.copy()

    n_noisy = int(round(cfg.sigma * n))
    noisy_order = rng.permutation(n)[:n_noisy]
    n_hard = int(round(cfg.hard_fraction * n_noisy))

    noise_flag = np.zeros(n, dtype=bool)
    hard_flag = np.zeros(n, dtype=bool)
    noise_flag[noisy_order] = True

    # Targets are shuffled, not copied: a cyclic shift within each group keeps
    # every target vector unique in the dataset and guarantees no fixed point.
    hard_rows = np.sort(noisy_order[:n_hard])
    plain_rows = np.sort(noisy_order[n_hard:])

    def cyclic_reassign(rows: np.ndarray) -> None:
        shuffled = rows[rng.permutation(rows.size)]
        tar[shuffled] = clean_tar[np.roll(shuffled, 1)]

    leftover = []
    for c in np.unique(cluster_id[hard_rows]) if hard_rows.size else []:
        group = hard_rows[cluster_id[hard_rows] == c]
        if group.size >= 2:
            cyclic_reassign(group)
            hard_flag[group] = True
        else:
            leftover.append(group)  # lone hard row in its cluster: degrade to plain
    plain_pool = np.sort(np.concatenate([plain_rows] + leftover)) if leftover else plain_rows
    if plain_pool.size >= 2:
        cyclic_reassign(plain_pool)
    elif plain_pool.size == 1:
        i = int(plain_pool[0])
        donor = int(rng.integers(0, n - 1))
        tar[i] = clean_tar[donor if donor < i else donor + 1]

    return TripletDataset(ref, mod, tar, noise_flag, hard_flag, cluster_id)


def _atomic_write(path: str, payload: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def save(ds: TripletDataset, path: str) -> None:
    """Serialize to the CSEP binary container (little-endian, row-major f64)."""
    parts = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, ds.n, ds.d_raw, ds.clusters),
        np.ascontiguousarray(ds.ref, dtype="<f8").tobytes(),
        np.ascontiguousarray(ds.mod, dtype="<f8").tobytes(),
        np.ascontiguousarray(ds.tar, dtype="<f8").tobytes(),
        ds.noise_flag.astype(np.uint8).tobytes(),
        ds.hard_flag.astype(np.uint8).tobytes(),
        np.ascontiguousarray(ds.cluster_id, dtype="<u4").tobytes(),
    ]
    _atomic_write(path, b"".join(parts))


def load(path: str) -> TripletDataset:
    """Read a CSEP file; every corruption mode raises its own error type."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TruncatedError(f"{path}: file shorter than header")
    magic, version, n, d, clusters = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported version {version}")

    mat_bytes = n * d * 8
    expected = _HEADER.size + 3 * mat_bytes + 2 * n + 4 * n
    if len(raw) < expected:
        raise TruncatedError(f"{path}: expected {expected} bytes, got {len(raw)}")
    if len(raw) > expected:
        raise ShapeMismatchError(f"{path}: {len(raw) - expected} trailing bytes")

    off = _HEADER.size

    def block(count, dtype, width):
        nonlocal off
        out = np.frombuffer(raw, dtype=dtype, count=count, offset=off).copy()
        off += count * width
        return out

    ref = block(n * d, "<f8", 8).reshape(n, d)
    mod = block(n * d, "<f8", 8).reshape(n, d)
    tar = block(n * d, "<f8", 8).reshape(n, d)
    noise = block(n, np.uint8, 1)
    hard = block(n, np.uint8, 1)
    cluster_id = block(n, "<u4", 4)

    if np.any(noise > 1) or np.any(hard > 1):
        raise ShapeMismatchError(f"{path}: flag bytes must be 0 or 1")
    if clusters and np.any(cluster_id >= clusters):
        raise ShapeMismatchError(f"{path}: cluster_id exceeds declared cluster count")
    noise_flag = noise.astype(bool)
    hard_flag = hard.astype(bool)
    if np.any(hard_flag & ~noise_flag):
        raise ShapeMismatchError(f"{path}: hard flag set on a non-noisy triplet")
    return TripletDataset(ref, mod, tar, noise_flag, hard_flag, cluster_id)


def export_csv(ds: TripletDataset, path: str) -> None:
    """One triplet per row for eyeball inspection; flags in the last columns."""
    d = ds.d_raw
    header = (
        [f"ref_{j}" for j in range(d)]
        + [f"mod_{j}" for j in range(d)]
        + [f"tar_{j}" for j in range(d)]
        + ["cluster_id", "noise_flag", "hard_flag"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = (
                [repr(float(v)) for v in ds.ref[i]]
                + [repr(float(v)) for v in ds.mod[i]]
                + [repr(float(v)) for v in ds.tar[i]]
                + [int(ds.cluster_id[i]), int(ds.noise_flag[i]), int(ds.hard_flag[i])]
            )
            writer.writerow(row)
