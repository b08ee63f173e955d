"""Dense row-major matrices with a canonical byte encoding.

Two multiplication routes exist on purpose: :func:`multiply` is the numpy
kernel used by miners and the coordinator, :func:`multiply_naive` is a plain
triple loop kept free of numpy so tests can use it as an independent oracle.
In exact integer mode both are bit-exact.
"""

from __future__ import annotations

import hashlib
import struct
from operator import mul
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError

INT_MODE = "int"
FLOAT_MODE = "float"

# |x| <= 2**20 keeps length <= 2**12 dot products inside the 53-bit mantissa
EXACT_BOUND = 2**20
RANDOM_INT_RANGE = 64

_DIMS = struct.Struct(">II")


class Matrix:
    """Immutable ``rows x cols`` matrix of binary64 values.

    Backed by a read-only C-contiguous ``float64`` array; slices taken by the
    pipeline stay views into the parent storage.
    """

    __slots__ = ("_a",)

    def __init__(self, data: Sequence[Sequence[float]] | np.ndarray):
        a = np.array(data, dtype=np.float64, order="C", copy=True)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise DimensionError(f"matrix needs rows >= 1 and cols >= 1, got shape {a.shape}")
        a.setflags(write=False)
        self._a = a

    @classmethod
    def wrap(cls, a: np.ndarray) -> "Matrix":
        """Adopt ``a`` without copying when it is already float64 and 2-D."""
        if a.dtype != np.float64 or a.ndim != 2 or 0 in a.shape:
            return cls(a)
        m = cls.__new__(cls)
        if a.flags.writeable:
            a = a.view()
            a.setflags(write=False)
        m._a = a
        return m

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls.wrap(np.zeros((rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "Matrix":
        return cls.wrap(np.eye(n))

    @property
    def rows(self) -> int:
        return self._a.shape[0]

    @property
    def cols(self) -> int:
        return self._a.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._a.shape  # type: ignore[return-value]

    @property
    def array(self) -> np.ndarray:
        """Read-only ndarray view of the values."""
        return self._a

    def __getitem__(self, idx):
        return self._a[idx]

    def tolist(self) -> list[list[float]]:
        return self._a.tolist()

    def to_bytes(self) -> bytes:
        """Canonical encoding: big-endian u32 rows, u32 cols, then binary64 elements row-major.

        Negative zero is folded to +0 so digests do not depend on summation order.
        """
        body = (self._a + 0.0).astype(">f8", copy=False).tobytes(order="C")
        return _DIMS.pack(self.rows, self.cols) + body

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()

    def is_exact_int(self) -> bool:
        a = self._a
        return bool(np.all(np.abs(a) <= EXACT_BOUND) and np.all(a == np.rint(a)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Matrix):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._a, other._a))

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        if self.rows * self.cols <= 16:
            return f"Matrix({self.tolist()})"
        return f"Matrix<{self.rows}x{self.cols}>"


def digest_pair(a: Matrix, b: Matrix) -> bytes:
    """SHA-256 over the concatenated canonical bytes of two operands."""
    h = hashlib.sha256(a.to_bytes())
    h.update(b.to_bytes())
    return h.digest()


def _check_conform(a: Matrix, b: Matrix) -> None:
    if a.cols != b.rows:
        raise DimensionError(f"cannot multiply {a.rows}x{a.cols} by {b.rows}x{b.cols}")


def multiply_naive(a: Matrix, b: Matrix) -> Matrix:
    """Reference product by explicit summation, no BLAS involved."""
    _check_conform(a, b)
    left = a.tolist()
    right_cols = list(zip(*b.tolist()))
    out = [[sum(map(mul, row, col)) for col in right_cols] for row in left]
    return Matrix(out)


def multiply(a: Matrix, b: Matrix) -> Matrix:
    _check_conform(a, b)
    return Matrix.wrap(a.array @ b.array)


def chain_product_naive(chain: Iterable[Matrix]) -> Matrix:
    it = iter(chain)
    acc = next(it)
    for m in it:
        acc = multiply_naive(acc, m)
    return acc


def seeded_random_matrix(seed: int, rows: int, cols: int, mode: str = INT_MODE) -> Matrix:
    """Deterministic matrix from ``(seed, rows, cols, mode)``.

    Integer mode draws uniformly from ``[-64, 64]``; float mode from ``[-1, 1)``.
    """
    if rows < 1 or cols < 1:
        raise DimensionError(f"rows and cols must be >= 1, got {rows}x{cols}")
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, rows, cols])
    return random_matrix(rng, rows, cols, mode)


def random_matrix(rng: np.random.Generator, rows: int, cols: int, mode: str = INT_MODE) -> Matrix:
    if mode == INT_MODE:
        a = rng.integers(-RANDOM_INT_RANGE, RANDOM_INT_RANGE + 1, size=(rows, cols)).astype(np.float64)
    elif mode == FLOAT_MODE:
        a = rng.uniform(-1.0, 1.0, size=(rows, cols))
    else:
        raise ValueError(f"unknown value mode {mode!r}")
    return Matrix.wrap(a)


def equal_within(a: Matrix, b: Matrix, tol: float = 0.0) -> bool:
    """Same shape and ``max|a - b| <= tol``; ``tol=0`` demands exact equality."""
    if a.shape != b.shape:
        return False
    if tol == 0:
        return bool(np.array_equal(a.array, b.array))
    return bool(np.max(np.abs(a.array - b.array)) <= tol)
