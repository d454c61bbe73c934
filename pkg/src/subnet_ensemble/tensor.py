"""Dense float64 tensors and the kernels the model and metrics are built from.

A :class:`Tensor` is an immutable, row-major block of 64-bit reals.  All
kernels are pure functions returning new tensors.  Broadcasting is limited
to scalar operands plus the explicit row/column helpers (``add_row``,
``scale_rows``, ``scale_cols``) so that shape mistakes fail loudly.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, NonFiniteError, ShapeError

MAP_KINDS = (
    "relu",
    "sqrt",
    "exp",
    "log",
    "negate",
    "add_scalar",
    "mul_scalar",
    "hinge_below",
)
PARAM_MAP_KINDS = ("add_scalar", "mul_scalar", "hinge_below")
REDUCE_KINDS = ("mean", "sum", "var_unbiased")


class Tensor:
    """Immutable n-dimensional array of finite float64 values."""

    __slots__ = ("_a",)

    def __init__(self, data, shape: Sequence[int] | None = None):
        a = np.array(data, dtype=np.float64)
        if shape is not None:
            shape = tuple(int(s) for s in shape)
            if math.prod(shape) != a.size:
                raise ShapeError(
                    f"shape {shape} holds {math.prod(shape)} values, got {a.size}"
                )
            a = a.reshape(shape)
        if a.ndim == 0:
            a = a.reshape(1)
        if any(s < 1 for s in a.shape):
            raise ShapeError(f"extents must be positive, got {a.shape}")
        _check_finite(a)
        a.setflags(write=False)
        self._a = a

    @classmethod
    def _wrap(cls, a: np.ndarray) -> "Tensor":
        # kernel results: already float64 and freshly allocated
        t = object.__new__(cls)
        a = np.ascontiguousarray(a, dtype=np.float64)
        if a.ndim == 0:
            a = a.reshape(1)
        _check_finite(a)
        a.setflags(write=False)
        t._a = a
        return t

    @classmethod
    def zeros(cls, *shape: int) -> "Tensor":
        return cls._wrap(np.zeros(shape))

    @classmethod
    def ones(cls, *shape: int) -> "Tensor":
        return cls._wrap(np.ones(shape))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._a.shape

    @property
    def rank(self) -> int:
        return self._a.ndim

    @property
    def size(self) -> int:
        return self._a.size

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values (read-only)."""
        return self._a.reshape(-1)

    @property
    def array(self) -> np.ndarray:
        """Shaped read-only view of the values."""
        return self._a

    def numpy(self) -> np.ndarray:
        """Writable copy."""
        return self._a.copy()

    def item(self) -> float:
        if self._a.size != 1:
            raise ShapeError(f"item() needs a 1-element tensor, shape is {self.shape}")
        return float(self._a.reshape(-1)[0])

    def tolist(self):
        return self._a.tolist()

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._a
        return self._a.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._a, other._a))

    def __hash__(self):
        return hash((self.shape, self._a.tobytes()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, data={np.array2string(self._a, threshold=8)})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(a: np.ndarray) -> None:
    if not np.isfinite(a).all():
        idx = np.unravel_index(int(np.argmin(np.isfinite(a))), a.shape)
        raise NonFiniteError(f"non-finite value {a[idx]!r} at index {tuple(int(i) for i in idx)}")


def _first_bad(mask: np.ndarray) -> tuple[int, ...]:
    return tuple(int(i) for i in np.argwhere(mask)[0])


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- core kernels


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.rank != 2 or b.rank != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ for shapes {a.shape} and {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.array @ b.array
    return Tensor._wrap(out)


def reduce(t: Tensor, axis: int, kind: str) -> Tensor:
    """Reduce along ``axis`` with ``kind`` in {mean, sum, var_unbiased}.

    The axis is removed; reducing a rank-1 tensor yields a 1-element tensor.
    ``var_unbiased`` is the two-pass estimator with divisor ``n - 1``.
    """
    if kind not in REDUCE_KINDS:
        raise ValueError(f"unknown reduce kind {kind!r}")
    if not 0 <= axis < t.rank:
        raise ShapeError(f"axis {axis} out of range for rank {t.rank}")
    a = t.array
    n = a.shape[axis]
    if kind == "sum":
        out = a.sum(axis=axis)
    elif kind == "mean":
        out = a.sum(axis=axis) / n
    else:
        if n < 2:
            raise ShapeError(f"var_unbiased needs extent >= 2 along axis {axis}, got {n}")
        mean = a.sum(axis=axis, keepdims=True) / n
        d = a - mean
        out = (d * d).sum(axis=axis) / (n - 1)
    return Tensor._wrap(out)


def map(t: Tensor, kind: str, c: float | None = None) -> Tensor:  # noqa: A001
    """Elementwise op; ``c`` parameterises add_scalar, mul_scalar and hinge_below."""
    a = t.array
    if kind in PARAM_MAP_KINDS:
        if c is None:
            raise ValueError(f"{kind} needs a scalar parameter")
        c = float(c)
    if kind == "relu":
        out = np.maximum(a, 0.0)
    elif kind == "sqrt":
        if (a < 0).any():
            idx = _first_bad(a < 0)
            raise DomainError(f"sqrt of negative value {a[idx]!r} at index {idx}")
        out = np.sqrt(a)
    elif kind == "exp":
        with np.errstate(over="ignore"):
            out = np.exp(a)
    elif kind == "log":
        if (a <= 0).any():
            idx = _first_bad(a <= 0)
            raise DomainError(f"log of non-positive value {a[idx]!r} at index {idx}")
        out = np.log(a)
    elif kind == "negate":
        out = -a
    elif kind == "add_scalar":
        out = a + c
    elif kind == "mul_scalar":
        out = a * c
    elif kind == "hinge_below":
        out = np.maximum(c - a, 0.0)
    else:
        raise ValueError(f"unknown map kind {kind!r}")
    return Tensor._wrap(out)


# ------------------------------------------------------------ structural/binary


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Tensor._wrap(a.array + b.array)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return Tensor._wrap(a.array - b.array)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return Tensor._wrap(a.array * b.array)


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    if (b.array == 0).any():
        idx = _first_bad(b.array == 0)
        raise DomainError(f"division by zero at index {idx}")
    return Tensor._wrap(a.array / b.array)


def transpose(t: Tensor) -> Tensor:
    if t.rank != 2:
        raise ShapeError(f"transpose needs rank 2, got {t.shape}")
    return Tensor._wrap(t.array.T)


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} to {shape}")
    return Tensor._wrap(t.array.reshape(shape))


def stack(ts: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(ts)
    if not ts:
        raise ShapeError("stack of zero tensors")
    for t in ts[1:]:
        _same_shape(ts[0], t, "stack")
    if not 0 <= axis <= ts[0].rank:
        raise ShapeError(f"stack axis {axis} out of range")
    return Tensor._wrap(np.stack([t.array for t in ts], axis=axis))


def concat(ts: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(ts)
    if not ts:
        raise ShapeError("concat of zero tensors")
    r = ts[0].rank
    if not 0 <= axis < r:
        raise ShapeError(f"concat axis {axis} out of range")
    for t in ts[1:]:
        if t.rank != r or any(
            s != s0 for i, (s, s0) in enumerate(zip(t.shape, ts[0].shape)) if i != axis
        ):
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} and {t.shape}")
    return Tensor._wrap(np.concatenate([t.array for t in ts], axis=axis))


def _row_col_check(x: Tensor, v: Tensor, extent_axis: int, op: str) -> None:
    if x.rank != 2 or v.rank != 1 or v.shape[0] != x.shape[extent_axis]:
        raise ShapeError(f"{op}: shapes {x.shape} and {v.shape} are incompatible")


def add_row(x: Tensor, row: Tensor) -> Tensor:
    """``x[i, j] + row[j]`` for every row ``i`` (bias addition)."""
    _row_col_check(x, row, 1, "add_row")
    return Tensor._wrap(x.array + row.array[None, :])


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """``x[i, j] * s[i]``."""
    _row_col_check(x, s, 0, "scale_rows")
    return Tensor._wrap(x.array * s.array[:, None])


def scale_cols(x: Tensor, s: Tensor) -> Tensor:
    """``x[i, j] * s[j]``."""
    _row_col_check(x, s, 1, "scale_cols")
    return Tensor._wrap(x.array * s.array[None, :])
