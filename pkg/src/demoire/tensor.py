"""Dense NCHW tensors and the elementwise primitives everything else builds on.

All computation is double precision. A :class:`Tensor` is a plain container:
``data`` holds the values, ``grad`` (when present) holds a gradient of the
same shape. Forward passes never mutate their inputs; gradient buffers are
written only by the backward call that owns them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

Shape4 = tuple[int, int, int, int]


def _validate_shape(shape) -> Shape4:
    dims = tuple(int(d) for d in shape)
    if len(dims) != 4:
        raise ShapeError(f"expected 4 dims (n, c, h, w), got {shape!r}")
    if any(d < 1 for d in dims):
        raise ShapeError(f"all dims must be >= 1, got {shape!r}")
    return dims


@dataclass
class Tensor:
    """A dense (n, c, h, w) array of float64 with an optional gradient buffer."""

    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        _validate_shape(self.data.shape)
        if self.grad is not None:
            self.grad = np.asarray(self.grad, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                raise ShapeError(
                    f"grad shape {self.grad.shape} != data shape {self.data.shape}"
                )

    @property
    def shape(self) -> Shape4:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), None if self.grad is None else self.grad.copy())


def full(shape, fill: float) -> Tensor:
    return Tensor(np.full(_validate_shape(shape), float(fill)))


def zeros(shape) -> Tensor:
    return full(shape, 0.0)


def uniform(shape, low: float = -1.0, high: float = 1.0, seed: int = 0) -> Tensor:
    """Seeded uniform tensor; identical seed gives identical content."""
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(low, high, size=_validate_shape(shape)))


def from_array(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64))


def _require_same_shape(a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


class Add:
    """Elementwise a + b; gradient passes through unchanged to both operands."""

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        _require_same_shape(a, b)
        return Tensor(a.data + b.data)

    def backward(self, gout: np.ndarray):
        return gout, gout.copy()

    def params(self):
        return []


class MulScalar:
    """Elementwise a * s for a fixed scalar s."""

    def __init__(self, scalar: float):
        self.scalar = float(scalar)

    def forward(self, a: Tensor) -> Tensor:
        return Tensor(a.data * self.scalar)

    def backward(self, gout: np.ndarray):
        return gout * self.scalar

    def params(self):
        return []


class EwMul:
    """Elementwise a * b; backward routes the other operand's values across."""

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        _require_same_shape(a, b)
        self._a = a.data
        self._b = b.data
        return Tensor(a.data * b.data)

    def backward(self, gout: np.ndarray):
        return gout * self._b, gout * self._a

    def params(self):
        return []


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add().forward(a, b)


def mul_scalar(a: Tensor, s: float) -> Tensor:
    return MulScalar(s).forward(a)


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    return EwMul().forward(a, b)
