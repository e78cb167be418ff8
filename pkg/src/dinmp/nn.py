"""Minimal float64 numerical core with hand-written reverse accumulation.

Every differentiable op comes as a ``*_forward`` / ``*_backward`` pair (or a
forward whose backward is trivial enough to inline at the call site).  The
forward returns whatever the backward needs as an opaque cache; models chain
these over a fixed graph instead of recording a tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

ACTIVATIONS = ("relu", "sigmoid", "identity")


class ShapeError(ValueError):
    """Raised when operand shapes or index ranges are inconsistent."""


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


# ---------------------------------------------------------------------------
# parameters and optimizer
# ---------------------------------------------------------------------------


@dataclass
class _Slot:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray


@dataclass
class ParameterStore:
    """Named learnable tensors with gradients and Adam moments.

    The Adam step counter is shared by every parameter.
    """

    slots: dict[str, _Slot] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.slots:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self.slots[name] = _Slot(value, np.zeros_like(value), np.zeros_like(value), np.zeros_like(value))
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.slots[name].value

    def __contains__(self, name: object) -> bool:
        return name in self.slots

    def __iter__(self) -> Iterator[str]:
        return iter(self.slots)

    def __len__(self) -> int:
        return len(self.slots)

    def grad(self, name: str) -> np.ndarray:
        return self.slots[name].grad

    def zero_grad(self) -> None:
        for slot in self.slots.values():
            slot.grad[...] = 0.0

    def set_value(self, name: str, value: np.ndarray) -> None:
        slot = self.slots[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != slot.value.shape:
            raise ShapeError(f"{name}: expected shape {slot.value.shape}, got {value.shape}")
        slot.value[...] = value

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: slot.value.copy() for name, slot in self.slots.items()}


def adam_step(
    store: ParameterStore,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update over every parameter, then zero the grads."""
    for name, slot in store.slots.items():
        if not np.all(np.isfinite(slot.grad)):
            raise NonFiniteGradientError(name)
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for slot in store.slots.values():
        g = slot.grad
        slot.m *= beta1
        slot.m += (1.0 - beta1) * g
        slot.v *= beta2
        slot.v += (1.0 - beta2) * (g * g)
        slot.value -= lr * (slot.m / c1) / (np.sqrt(slot.v / c2) + eps)
        g[...] = 0.0


# ---------------------------------------------------------------------------
# embeddings and segment aggregation
# ---------------------------------------------------------------------------


def init_embedding(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(dim)
    return rng.uniform(-bound, bound, size=(rows, dim))


def embedding_lookup(table: np.ndarray, ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = ids[(ids < 0) | (ids >= table.shape[0])][0]
        raise IndexError(f"embedding id {bad} outside [0, {table.shape[0]})")
    return table[ids]


def embedding_backward(grad_table: np.ndarray, ids: np.ndarray, dout: np.ndarray) -> None:
    """Scatter-add ``dout`` rows into ``grad_table``; duplicate ids accumulate."""
    np.add.at(grad_table, np.asarray(ids, dtype=np.int64), dout)


def check_offsets(row_offsets: np.ndarray, n: int) -> np.ndarray:
    offsets = np.asarray(row_offsets, dtype=np.int64)
    if offsets.ndim != 1 or offsets.size < 1:
        raise ShapeError("row_offsets must be a nonempty 1-D array")
    if offsets[0] != 0 or offsets[-1] != n:
        raise ShapeError(f"row_offsets must start at 0 and end at {n}, got {offsets[0]}..{offsets[-1]}")
    if np.any(np.diff(offsets) < 0):
        raise ShapeError("row_offsets must be nondecreasing")
    return offsets


def segment_matrix(row_offsets: np.ndarray, n: int) -> sp.csr_matrix:
    """B x N 0/1 matrix whose row i selects the half-open range of segment i."""
    offsets = check_offsets(row_offsets, n)
    return sp.csr_matrix((np.ones(n), np.arange(n), offsets), shape=(offsets.size - 1, n))


def segment_sum(values: np.ndarray, row_offsets: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    out = segment_matrix(row_offsets, values.shape[0]) @ values
    return np.asarray(out)


def segment_sum_backward(dout: np.ndarray, row_offsets: np.ndarray) -> np.ndarray:
    return np.repeat(dout, np.diff(row_offsets), axis=0)


def group_matrix(group_ids: np.ndarray, n_groups: int) -> sp.csr_matrix:
    group_ids = np.asarray(group_ids, dtype=np.int64)
    n = group_ids.size
    if n and (group_ids.min() < 0 or group_ids.max() >= n_groups):
        raise IndexError(f"group id outside [0, {n_groups})")
    return sp.csr_matrix((np.ones(n), (group_ids, np.arange(n))), shape=(n_groups, n))


# ---------------------------------------------------------------------------
# dense layers
# ---------------------------------------------------------------------------


def activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "sigmoid":
        return sigmoid(z)
    if act == "identity":
        return z
    raise ValueError(f"unknown activation {act!r}; expected one of {ACTIVATIONS}")


def activate_backward(dy: np.ndarray, z: np.ndarray, y: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return dy * (z > 0)
    if act == "sigmoid":
        return dy * y * (1.0 - y)
    return dy


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


Layer = tuple[np.ndarray, np.ndarray, str]


def init_dense(rng: np.random.Generator, d_in: int, d_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Glorot-uniform weight, zero bias."""
    bound = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-bound, bound, size=(d_in, d_out)), np.zeros(d_out)


def mlp_forward(x: np.ndarray, layers: Sequence[Layer]) -> tuple[np.ndarray, list]:
    cache = []
    for W, b, act in layers:
        if x.shape[-1] != W.shape[0] or W.shape[1] != b.shape[0]:
            raise ShapeError(f"layer expects input dim {W.shape[0]}, got {x.shape[-1]}")
        z = x @ W + b
        y = activate(z, act)
        cache.append((x, W, z, y, act))
        x = y
    return x, cache


def mlp_backward(dy: np.ndarray, cache: list) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Returns (dx, [(dW, db) per layer])."""
    grads = []
    for x, W, z, y, act in reversed(cache):
        dz = activate_backward(dy, z, y, act)
        grads.append((x.T @ dz, dz.sum(axis=0)))
        dy = dz @ W.T
    grads.reverse()
    return dy, grads


# ---------------------------------------------------------------------------
# self-attention
# ---------------------------------------------------------------------------


def softmax(s: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def self_attention_forward(
    x: np.ndarray, Wq: np.ndarray, Wk: np.ndarray, Wv: np.ndarray
) -> tuple[np.ndarray, tuple]:
    """Single-head scaled dot-product self-attention with residual.

    ``x`` is (..., T, d); leading axes are independent samples.
    """
    d = x.shape[-1]
    if d == 0:
        raise ShapeError("self-attention needs d >= 1")
    if x.shape[-2] < 1:
        raise ShapeError("self-attention needs T >= 1")
    scale = 1.0 / math.sqrt(d)
    q, k, v = x @ Wq, x @ Wk, x @ Wv
    attn = softmax((q @ np.swapaxes(k, -1, -2)) * scale)
    out = x + attn @ v
    return out, (x, Wq, Wk, Wv, q, k, v, attn, scale)


def self_attention_backward(dout: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dWq, dWk, dWv)."""
    x, Wq, Wk, Wv, q, k, v, attn, scale = cache
    dattn = dout @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(attn, -1, -2) @ dout
    ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = np.swapaxes(ds, -1, -2) @ q
    d = x.shape[-1]
    xf = x.reshape(-1, d)

    def flat(a):
        return a.reshape(-1, d)

    dWq = xf.T @ flat(dq)
    dWk = xf.T @ flat(dk)
    dWv = xf.T @ flat(dv)
    dx = dout + dq @ Wq.T + dk @ Wk.T + dv @ Wv.T
    return dx, dWq, dWk, dWv


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    a = np.abs(analytic)
    n = np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), 1e-8)


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    checked: dict[str, int]
    skipped_kinks: dict[str, int]

    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def finite_diff_check(
    loss_fn: Callable[..., float],
    store: ParameterStore,
    batch: object,
    h: float = 1e-5,
    coords_per_param: int = 32,
    seed: int = 0,
    pattern_fn: Callable[[object], np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn(batch, backward=...)`` returns the scalar loss and, when
    ``backward`` is true, leaves the analytic gradient in ``store``.  Up to
    ``coords_per_param`` coordinates are sampled per parameter (every
    coordinate of smaller tensors).  Relative error is
    ``|a - n| / max(|a|, |n|, 1e-8)``.

    ``pattern_fn(batch)`` should return the relu on/off pattern of the forward
    pass; coordinates whose +/-h perturbation changes it straddle a kink, where
    the function is not differentiable, and are replaced by fresh samples.
    """
    rng = np.random.default_rng(seed)
    store.zero_grad()
    loss_fn(batch, backward=True)
    analytic = {name: store.grad(name).copy() for name in store}
    store.zero_grad()
    base = pattern_fn(batch) if pattern_fn is not None else None
    worst, checked, skipped = {}, {}, {}
    for name in store:
        flat = store[name].reshape(-1)
        g = analytic[name].reshape(-1)
        errs = []
        n_skip = 0
        for i in rng.permutation(flat.size):
            if len(errs) >= coords_per_param:
                break
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(batch, backward=False)
            kink = base is not None and not np.array_equal(pattern_fn(batch), base)
            flat[i] = orig - h
            down = loss_fn(batch, backward=False)
            kink = kink or (base is not None and not np.array_equal(pattern_fn(batch), base))
            flat[i] = orig
            if kink:
                n_skip += 1
                continue
            errs.append(relative_error(g[i], (up - down) / (2.0 * h)))
        worst[name] = float(np.max(errs)) if errs else 0.0
        checked[name] = len(errs)
        skipped[name] = n_skip
    return GradCheckReport(worst, checked, skipped)
