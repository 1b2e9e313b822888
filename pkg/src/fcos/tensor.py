"""Dense tensor values: the unit of storage for parameters and activations.

A Tensor is a thin wrapper over a row-major numpy array restricted to
fp32/fp64, with an optional gradient buffer of identical shape. All kernels
in this package operate on the raw arrays; the wrapper exists to enforce the
dtype/shape/grad invariants in one place.
"""
from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError, UsageError

DTYPES = {"fp32": np.float32, "fp64": np.float64}
_NAMES = {np.dtype(np.float32): "fp32", np.dtype(np.float64): "fp64"}


def dtype_of(array: np.ndarray) -> str:
    try:
        return _NAMES[array.dtype]
    except KeyError:
        raise UsageError(f"unsupported dtype {array.dtype}; expected fp32 or fp64")


class Tensor:
    """Numeric buffer plus optional gradient of the same shape and dtype."""

    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray, grad: np.ndarray | None = None):
        data = np.ascontiguousarray(data)
        dtype_of(data)  # validates
        self.data = data
        self.grad = None
        if grad is not None:
            self.set_grad(grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> str:
        return dtype_of(self.data)

    @property
    def size(self) -> int:
        return self.data.size

    def set_grad(self, grad: np.ndarray) -> None:
        grad = np.ascontiguousarray(grad)
        if grad.shape != self.data.shape or grad.dtype != self.data.dtype:
            raise ShapeError(
                f"grad shape/dtype {grad.shape}/{grad.dtype} does not match "
                f"parameter {self.data.shape}/{self.data.dtype}"
            )
        self.grad = grad

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.set_grad(grad.copy())
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype: str) -> "Tensor":
        return Tensor(self.data.astype(DTYPES[dtype]))

    def copy(self) -> "Tensor":
        t = Tensor(self.data.copy())
        if self.grad is not None:
            t.grad = self.grad.copy()
        return t

    def check_finite(self, what: str = "tensor") -> None:
        if not np.isfinite(self.data).all():
            raise NumericError(f"non-finite values in {what}")

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={'set' if self.grad is not None else 'none'})"


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype: str = "fp32") -> Tensor:
    """Kaiming-uniform fan-in init: U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    bound = np.sqrt(6.0 / fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(DTYPES[dtype])
    return Tensor(data)


def zeros(shape, dtype: str = "fp32") -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPES[dtype]))


def ones(shape, dtype: str = "fp32") -> Tensor:
    return Tensor(np.ones(shape, dtype=DTYPES[dtype]))
