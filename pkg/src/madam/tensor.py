"""Minimal dense tensor algebra on float64 numpy arrays.

Everything downstream (networks, optimizers, the log-space number system)
moves data around as plain ``numpy.ndarray`` values of dtype float64. This
module pins down the handful of operations whose exact semantics matter:
shape-checked matrix multiply, Frobenius norms and angles, elementwise
clamping, and guarded division. Arrays are treated as immutable values;
every operation returns a new array.
"""

from __future__ import annotations

import numpy as np

Tensor = np.ndarray


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class DegenerateAngleError(ValueError):
    """Angle requested between vectors where at least one is zero."""


def as_tensor(data) -> Tensor:
    """Coerce to a C-contiguous float64 array, rejecting NaN and Inf."""
    a = np.ascontiguousarray(data, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("tensor contains NaN or Inf")
    return a


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a 2-d ``a`` (m x k) with a 2-d ``b`` (k x n)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def frobenius_norm(a: Tensor) -> float:
    """Square root of the sum of squared entries."""
    return float(np.sqrt(np.sum(np.square(np.asarray(a, dtype=np.float64)))))


def inner(a: Tensor, b: Tensor) -> float:
    """Flattened dot product of two same-shape tensors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"inner product shapes disagree: {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))


def angle_between(a: Tensor, b: Tensor) -> float:
    """Angle in [0, pi] between two same-shape nonzero tensors.

    The cosine is clipped to [-1, 1] before arccos so that float rounding
    near parallel or antiparallel inputs cannot push it out of domain.
    """
    na = frobenius_norm(a)
    nb = frobenius_norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateAngleError("angle undefined for a zero tensor")
    c = inner(a, b) / (na * nb)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def sign(a: Tensor) -> Tensor:
    """Elementwise sign with sign(0) = 0."""
    return np.sign(np.asarray(a, dtype=np.float64))


def clamp(a: Tensor, bound: float) -> Tensor:
    """Project elementwise onto [-bound, bound]."""
    if bound < 0:
        raise ValueError(f"clamp bound must be nonnegative, got {bound}")
    return np.clip(np.asarray(a, dtype=np.float64), -bound, bound)


def guarded_div(num: Tensor, den: Tensor, eps: float) -> Tensor:
    """Elementwise num / (den + guard) with a sign-preserving guard.

    The guard is +eps where den >= 0 and -eps where den < 0, so the
    denominator never crosses zero. With den >= 0 (the only case used by
    the optimizers) this is exactly num / (den + eps), and 0/0 resolves
    to 0.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    if num.shape != den.shape:
        raise ShapeError(f"guarded_div shapes disagree: {num.shape} vs {den.shape}")
    guard = np.where(den >= 0, eps, -eps)
    return num / (den + guard)
