"""Dense float64 tensor kernels used by every other module.

All operations are pure: inputs are never mutated and results are freshly
allocated.  Arrays are row-major float64 throughout.  There is no
broadcasting beyond what the listed operations define; two-operand
elementwise kernels require identical shapes and raise ``DimensionError``
otherwise.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

# Alias used in signatures across the package: a dense float64 ndarray.
Tensor = np.ndarray


def as_tensor(values) -> Tensor:
    """Convert ``values`` to a float64 array, rejecting non-finite entries."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError("tensor values must be finite")
    return arr


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-d tensors."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul: expected 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions {a.shape} x {b.shape} do not agree")
    return a @ b


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for overflow safety."""
    if a.ndim != 2:
        raise DimensionError(f"softmax_rows: expected a 2-d tensor, got {a.ndim}-d")
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def l1_norm_lastdim(a: Tensor) -> Tensor:
    """Sum of absolute values along the last dimension."""
    if a.ndim < 1 or a.shape[-1] < 1:
        raise DimensionError(f"l1_norm_lastdim: last dimension must exist, got shape {a.shape}")
    return np.abs(a).sum(axis=-1)


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return a + b


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return a - b


def scale(a: Tensor, c: float) -> Tensor:
    return a * float(c)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "hadamard")
    return a * b


def lerp(a: Tensor, b: Tensor, w: float) -> Tensor:
    """Linear interpolation (1-w)*a + w*b with exact endpoints."""
    _require_same_shape(a, b, "lerp")
    w = float(w)
    # Endpoint branches keep lerp(a, b, 0) == a and lerp(a, b, 1) == b bitwise.
    if w == 0.0:
        return a.copy()
    if w == 1.0:
        return b.copy()
    return (1.0 - w) * a + w * b
