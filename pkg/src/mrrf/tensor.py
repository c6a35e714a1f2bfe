"""Dense tensor primitives.

Tensors are C-ordered ``float64`` numpy arrays (last mode varies fastest).
Mode indices are 0-based.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, ShapeError
from . import kernels

__all__ = [
    "as_tensor",
    "check_shape",
    "outer_product",
    "kmode_product",
    "unfold",
    "fold",
    "flatten",
    "pad_one",
]

_INT_MAX = np.iinfo(np.intp).max


def check_shape(dims: Sequence[int]) -> tuple[int, ...]:
    """Validate a shape: positive extents whose product fits a platform int."""
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise InvalidArgumentError(f"every extent must be >= 1, got {dims}")
    if math.prod(dims) > _INT_MAX:
        raise InvalidArgumentError(f"element count of {dims} overflows")
    return dims


def as_tensor(x) -> np.ndarray:
    """Return ``x`` as a contiguous float64 array (no copy when already one)."""
    return np.ascontiguousarray(x, dtype=np.float64)


def outer_product(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Outer product ``v_1 (x) ... (x) v_M`` of 1-mode tensors."""
    if len(vectors) == 0:
        raise InvalidArgumentError("outer_product needs at least one vector")
    vs = [as_tensor(v) for v in vectors]
    for i, v in enumerate(vs):
        if v.ndim != 1:
            raise InvalidArgumentError(f"vector {i} has order {v.ndim}, expected 1")
        if v.size == 0:
            raise InvalidArgumentError(f"vector {i} is empty")
    flat = kernels.outer_rows([v[None, :] for v in vs])
    return flat.reshape(tuple(v.size for v in vs))


def kmode_product(t: np.ndarray, m: np.ndarray, k: int) -> np.ndarray:
    """Mode-``k`` product: contract mode ``k`` of ``t`` with the columns of ``m``.

    ``out[.., a, ..] = sum_b m[a, b] * t[.., b, ..]``; mode ``k`` of the result
    has extent ``m.shape[0]``.
    """
    t = as_tensor(t)
    m = as_tensor(m)
    if m.ndim != 2:
        raise ShapeError(f"matrix operand must have order 2, got shape {m.shape}")
    if not 0 <= k < t.ndim:
        raise InvalidArgumentError(f"mode {k} out of range for order-{t.ndim} tensor")
    if m.shape[1] != t.shape[k]:
        raise ShapeError(
            f"cannot contract mode {k} of tensor {t.shape} with matrix {m.shape}"
        )
    out = np.tensordot(m, t, axes=([1], [k]))
    return np.ascontiguousarray(np.moveaxis(out, 0, k))


def unfold(t: np.ndarray, k: int) -> np.ndarray:
    """Mode-``k`` matricization, shape ``(dims[k], prod(other dims))``.

    Columns enumerate the remaining modes in row-major order.
    """
    t = as_tensor(t)
    if not 0 <= k < t.ndim:
        raise InvalidArgumentError(f"mode {k} out of range for order-{t.ndim} tensor")
    return np.ascontiguousarray(np.moveaxis(t, k, 0).reshape(t.shape[k], -1))


def fold(m: np.ndarray, k: int, target: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold` for mode ``k`` and shape ``target``."""
    m = as_tensor(m)
    target = check_shape(target)
    if not 0 <= k < len(target):
        raise InvalidArgumentError(f"mode {k} out of range for shape {target}")
    rest = math.prod(target) // target[k]
    if m.ndim != 2 or m.shape != (target[k], rest):
        raise ShapeError(
            f"matrix {m.shape} cannot be folded at mode {k} into {target}"
        )
    moved = (target[k],) + target[:k] + target[k + 1:]
    return np.ascontiguousarray(np.moveaxis(m.reshape(moved), 0, k))


def flatten(t: np.ndarray) -> np.ndarray:
    """Row-major linearization."""
    return as_tensor(t).reshape(-1)


def pad_one(v: np.ndarray) -> np.ndarray:
    """Prepend a constant 1 (the bias slot)."""
    v = as_tensor(v).reshape(-1)
    return np.concatenate([np.ones(1), v])
