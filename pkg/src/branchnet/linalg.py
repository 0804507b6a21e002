"""Dense float64 matrix arithmetic with a fixed reduction order.

Matrices are plain C-contiguous 2-D ``numpy.ndarray`` objects (row-major,
batch items as rows); vectors are 1-D arrays.  numpy handles the purely
elementwise work, which has no reduction order to worry about.  Every
*summation* (matrix product, row/column sums) goes through the small
numba kernels below, which accumulate in ascending index order so that
results are bit-identical from run to run.
"""

from __future__ import annotations

from typing import Callable

import numba
import numpy as np

Matrix = np.ndarray
Vector = np.ndarray


class ContractViolation(ValueError):
    """Raised when an operation's shape or range precondition is broken."""


@numba.njit(cache=True)
def _matmul_kernel(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    # i-k-j order: each out[i, j] accumulates p = 0, 1, ..., k-1 in sequence
    for i in range(m):
        for p in range(k):
            aip = a[i, p]
            for j in range(n):
                out[i, j] += aip * b[p, j]
    return out


@numba.njit(cache=True)
def _col_sum_kernel(m):
    rows, cols = m.shape
    out = np.zeros(cols)
    for i in range(rows):
        for j in range(cols):
            out[j] += m[i, j]
    return out


@numba.njit(cache=True)
def _row_sum_kernel(m):
    rows, cols = m.shape
    out = np.zeros(rows)
    for i in range(rows):
        acc = 0.0
        for j in range(cols):
            acc += m[i, j]
        out[i] = acc
    return out


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> Matrix:
    """Build a contiguous float64 matrix from nested lists or a flat row-major buffer."""
    arr = np.array(data, dtype=np.float64)
    if rows is not None and cols is not None:
        if arr.size != rows * cols:
            raise ContractViolation(
                f"buffer of length {arr.size} cannot fill a {rows}x{cols} matrix"
            )
        arr = arr.reshape(rows, cols)
    if arr.ndim != 2:
        raise ContractViolation(f"expected a 2-D matrix, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def _check_matrix(m: Matrix, name: str) -> None:
    if not isinstance(m, np.ndarray) or m.ndim != 2:
        raise ContractViolation(f"{name} must be a 2-D array")


def matmul(a: Matrix, b: Matrix) -> Matrix:
    _check_matrix(a, "a")
    _check_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: {a.shape} x {b.shape} is not conformable")
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return _matmul_kernel(a, b)


def add_bias(m: Matrix, b: Vector) -> Matrix:
    """Add ``b`` to every row of ``m``."""
    _check_matrix(m, "m")
    if b.ndim != 1 or m.shape[1] != b.shape[0]:
        raise ContractViolation(f"add_bias: bias of shape {b.shape} vs matrix {m.shape}")
    return m + b[np.newaxis, :]


def transpose(m: Matrix) -> Matrix:
    _check_matrix(m, "m")
    return np.ascontiguousarray(m.T)


def scale(m: np.ndarray, s: float) -> np.ndarray:
    return m * float(s)


def elementwise(m: np.ndarray, n: np.ndarray, op: Callable | str) -> np.ndarray:
    """Apply a binary op entry by entry.  ``op`` may be a ufunc or one of
    ``"add"``, ``"sub"``, ``"mul"``, ``"div"``, ``"max"``."""
    if m.shape != n.shape:
        raise ContractViolation(f"elementwise: shapes {m.shape} and {n.shape} differ")
    if isinstance(op, str):
        try:
            op = _NAMED_OPS[op]
        except KeyError:
            raise ContractViolation(f"unknown elementwise op {op!r}") from None
    return op(m, n)


_NAMED_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
}


def column_sums(m: Matrix) -> Vector:
    """Sum over rows (batch axis), ascending row index."""
    _check_matrix(m, "m")
    return _col_sum_kernel(np.ascontiguousarray(m, dtype=np.float64))


def row_sums(m: Matrix) -> Vector:
    _check_matrix(m, "m")
    return _row_sum_kernel(np.ascontiguousarray(m, dtype=np.float64))


def total(x: np.ndarray) -> float:
    """Sum of every entry, row-major ascending order."""
    flat = np.ascontiguousarray(x, dtype=np.float64).reshape(1, -1)
    return float(_row_sum_kernel(flat)[0])


def zeros(rows: int, cols: int) -> Matrix:
    return np.zeros((rows, cols))


def identity(n: int) -> Matrix:
    return np.eye(n)


def all_finite(*arrays: np.ndarray) -> bool:
    return all(bool(np.isfinite(a).all()) for a in arrays)
