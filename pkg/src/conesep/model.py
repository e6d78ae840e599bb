"""Desk-scale composition model: three small heads over raw embeddings.

Heads (rows are samples, outputs unit-normalized):
    f_c   = unit(tanh([ref mod] @ w_c + b_c))        composed query
    f_t   = unit(tar @ w_t + b_t)                    target projection
    f_neg = unit(tanh([p_neg ref mod] @ w_n + b_n))  negative composition

``p_neg`` is a single learnable prompt vector prepended to every row of the
negative head input. Weights are stored (input_dim, out_dim) so a forward pass
is a plain right-multiplication.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .errors import (
    BadMagicError,
    DimensionError,
    NonFiniteError,
    ShapeMismatchError,
    TruncatedError,
    VersionError,
)
from .numeric import Rng, require_finite

PARAM_FIELDS = ("w_c", "b_c", "w_t", "b_t", "w_n", "b_n", "p_neg")

# frozen Adam moment coefficients
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CKPT_MAGIC = b"CSEPM"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<5sHII")


@dataclass
class ModelParams:
    w_c: np.ndarray  # (2*d_raw, dim)
    b_c: np.ndarray  # (dim,)
    w_t: np.ndarray  # (d_raw, dim)
    b_t: np.ndarray  # (dim,)
    w_n: np.ndarray  # (3*d_raw, dim)
    b_n: np.ndarray  # (dim,)
    p_neg: np.ndarray  # (d_raw,)

    @property
    def d_raw(self) -> int:
        return self.w_t.shape[0]

    @property
    def dim(self) -> int:
        return self.w_t.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(*(getattr(self, f).copy() for f in PARAM_FIELDS))


def init_params(d_raw: int, dim: int, rng: Rng) -> ModelParams:
    """Gaussian init scaled by 1/sqrt(fan_in); biases zero, prompt unit-scale."""

    def w(fan_in, fan_out):
        return rng.normal(fan_in, fan_out) / np.sqrt(fan_in)

    return ModelParams(
        w_c=w(2 * d_raw, dim),
        b_c=np.zeros(dim),
        w_t=w(d_raw, dim),
        b_t=np.zeros(dim),
        w_n=w(3 * d_raw, dim),
        b_n=np.zeros(dim),
        p_neg=rng.normal(1, d_raw)[0],
    )


@dataclass
class ForwardOutputs:
    """Unit-row feature tensors wired to the parameter leaves that made them."""

    f_c: ad.Tensor
    f_t: ad.Tensor
    f_neg: ad.Tensor
    param_tensors: dict[str, ad.Tensor]

    @property
    def batch_size(self) -> int:
        return self.f_c.value.shape[0]


def forward(params: ModelParams, refs: np.ndarray, mods: np.ndarray, tars: np.ndarray) -> ForwardOutputs:
    """Run all three heads on one batch; raises on dim mismatch or zero-norm rows."""
    refs = np.asarray(refs, dtype=np.float64)
    mods = np.asarray(mods, dtype=np.float64)
    tars = np.asarray(tars, dtype=np.float64)
    d = params.d_raw
    if refs.ndim != 2 or refs.shape[1] != d:
        raise DimensionError(f"refs: expected (B, {d}), got {refs.shape}")
    if mods.shape != refs.shape or tars.shape != refs.shape:
        raise DimensionError(
            f"batch blocks disagree: refs {refs.shape}, mods {mods.shape}, tars {tars.shape}"
        )
    b = refs.shape[0]

    handles = {name: ad.leaf(getattr(params, name), needs_grad=True) for name in PARAM_FIELDS}

    x_c = ad.concat_cols([ad.const(refs), ad.const(mods)])
    f_c = ad.normalize_rows(ad.tanh(ad.add(ad.matmul(x_c, handles["w_c"]), handles["b_c"])))

    f_t = ad.normalize_rows(ad.add(ad.matmul(ad.const(tars), handles["w_t"]), handles["b_t"]))

    prompt = ad.broadcast_row(handles["p_neg"], b)
    x_n = ad.concat_cols([prompt, ad.const(refs), ad.const(mods)])
    f_neg = ad.normalize_rows(ad.tanh(ad.add(ad.matmul(x_n, handles["w_n"]), handles["b_n"])))

    return ForwardOutputs(f_c=f_c, f_t=f_t, f_neg=f_neg, param_tensors=handles)


def grad_check(params: ModelParams, batch, loss_fn, step: float = 1e-5) -> float:
    """Worst relative error of analytic gradients vs central finite differences.

    ``loss_fn(outputs) -> LossValue``; every parameter entry is perturbed
    twice. Relative error uses an absolute floor of 1e-3 so near-zero
    gradients compare on absolute terms.
    """
    refs, mods, tars = batch
    analytic = loss_fn(forward(params, refs, mods, tars)).grads

    def value_at() -> float:
        v = loss_fn(forward(params, refs, mods, tars)).value
        if not np.isfinite(v):
            raise NonFiniteError("loss returned a non-finite value during grad check")
        return v

    worst = 0.0
    for name in PARAM_FIELDS:
        arr = getattr(params, name)
        flat = arr.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        for idx in range(flat.size):
            saved = flat[idx]
            flat[idx] = saved + step
            up = value_at()
            flat[idx] = saved - step
            down = value_at()
            flat[idx] = saved
            fd = (up - down) / (2.0 * step)
            denom = max(abs(fd), abs(grad_flat[idx]), 1e-3)
            worst = max(worst, abs(fd - grad_flat[idx]) / denom)
    return worst


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def adam_init(params: ModelParams) -> AdamState:
    return AdamState(
        step=0,
        m={f: np.zeros_like(getattr(params, f)) for f in PARAM_FIELDS},
        v={f: np.zeros_like(getattr(params, f)) for f in PARAM_FIELDS},
    )


def optimizer_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> ModelParams:
    """One Adam update with decoupled weight decay; mutates `state`, returns new params."""
    for name in PARAM_FIELDS:
        require_finite(grads[name], f"grad[{name}]")
    state.step += 1
    t = state.step
    out = {}
    for name in PARAM_FIELDS:
        g = grads[name]
        p = getattr(params, name)
        state.m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = state.m[name] / (1.0 - ADAM_BETA1**t)
        v_hat = state.v[name] / (1.0 - ADAM_BETA2**t)
        stepped = p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS) - lr * weight_decay * p
        require_finite(stepped, f"params[{name}] after step")
        out[name] = stepped
    return replace(params, **out)


def save_checkpoint(params: ModelParams, path: str) -> None:
    parts = [_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, params.d_raw, params.dim)]
    for name in PARAM_FIELDS:
        parts.append(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path: str) -> ModelParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CKPT_HEADER.size:
        raise TruncatedError(f"{path}: file shorter than header")
    magic, version, d, dim = _CKPT_HEADER.unpack_from(raw, 0)
    if magic != CKPT_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != CKPT_VERSION:
        raise VersionError(f"{path}: unsupported version {version}")

    shapes = {
        "w_c": (2 * d, dim),
        "b_c": (dim,),
        "w_t": (d, dim),
        "b_t": (dim,),
        "w_n": (3 * d, dim),
        "b_n": (dim,),
        "p_neg": (d,),
    }
    expected = _CKPT_HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes.values())
    if len(raw) < expected:
        raise TruncatedError(f"{path}: expected {expected} bytes, got {len(raw)}")
    if len(raw) > expected:
        raise ShapeMismatchError(f"{path}: {len(raw) - expected} trailing bytes")

    off = _CKPT_HEADER.size
    blocks = {}
    for name in PARAM_FIELDS:
        shape = shapes[name]
        count = int(np.prod(shape))
        blocks[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).copy().reshape(shape)
        off += count * 8
    return ModelParams(**blocks)
