"""Sparse COO storage, permutation state and error metrics.

Indices are 1-based in every file format and user-facing call; the
``indices`` arrays held by :class:`SparseArray` are 0-based for numpy
indexing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or unsupported input data."""


def padded_log_dim(n: int) -> int:
    """Smallest ``l`` with ``2**l >= n``."""
    if n < 1:
        raise DataError(f"dimension must be positive, got {n}")
    return (int(n) - 1).bit_length()


@dataclass(frozen=True)
class SparseArray:
    """Immutable D-order non-negative sparse tensor in COO form."""

    dims: tuple[int, ...]
    indices: np.ndarray  # (nnz, D) int64, 0-based
    values: np.ndarray  # (nnz,) float64, all > 0
    padded_log_dims: tuple[int, ...] = field(init=False)
    value_sq_sum: float = field(init=False)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        val = np.ascontiguousarray(self.values, dtype=np.float64)
        if len(dims) < 1:
            raise DataError("order must be at least 1")
        if idx.ndim != 2 or idx.shape[1] != len(dims) or val.shape != (idx.shape[0],):
            raise DataError("indices/values shape mismatch")
        if idx.size and ((idx < 0).any() or (idx >= np.asarray(dims)).any()):
            raise DataError("index outside logical dims")
        if (val <= 0).any() or not np.isfinite(val).all():
            raise DataError("values must be finite and positive")
        if idx.shape[0] > 1:
            keys = np.ravel_multi_index(idx.T, dims) if _fits_int64(dims) else None
            dup = (
                np.unique(keys).size != keys.size
                if keys is not None
                else np.unique(idx, axis=0).shape[0] != idx.shape[0]
            )
            if dup:
                raise DataError("duplicate index")
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "padded_log_dims", tuple(padded_log_dim(n) for n in dims))
        object.__setattr__(self, "value_sq_sum", float(np.dot(val, val)))

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    @property
    def padded_dims(self) -> tuple[int, ...]:
        return tuple(1 << l for l in self.padded_log_dims)

    @property
    def norm(self) -> float:
        return math.sqrt(self.value_sq_sum)

    def to_dense(self, padded: bool = False) -> np.ndarray:
        out = np.zeros(self.padded_dims if padded else self.dims)
        out[tuple(self.indices.T)] = self.values
        return out

    def subset(self, rows: np.ndarray) -> "SparseArray":
        """Array restricted to the given entry rows, keeping dims."""
        return SparseArray(self.dims, self.indices[rows], self.values[rows])


def _fits_int64(dims: Sequence[int]) -> bool:
    return sum(padded_log_dim(n) for n in dims) < 62


def from_dense(arr: np.ndarray) -> SparseArray:
    arr = np.asarray(arr, dtype=np.float64)
    idx = np.argwhere(arr != 0)
    return SparseArray(arr.shape, idx, arr[tuple(idx.T)])


def load_coo(
    path: str | Path,
    order: int | None = None,
    one_indexed: bool = True,
    dims: Sequence[int] | None = None,
) -> SparseArray:
    """Read a whitespace-separated COO text file or a Matrix Market file.

    Each data line holds ``order`` index tokens followed by one value
    token. Lines starting with ``%`` or ``#`` are comments. A Matrix Market
    ``coordinate`` header is honoured for matrices, including its size line.
    """
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().splitlines()

    mm_dims = None
    start = 0
    if lines and lines[0].lower().startswith("%%matrixmarket"):
        header = lines[0].lower().split()
        if len(header) < 5 or header[1] != "matrix" or header[2] != "coordinate":
            raise DataError(f"{path}: only 'matrix coordinate' Matrix Market files are supported")
        if header[3] not in ("real", "integer"):
            raise DataError(f"{path}: unsupported field type {header[3]!r}")
        if header[4] != "general":
            raise DataError(f"{path}: unsupported symmetry {header[4]!r}")
        if order not in (None, 2):
            raise DataError("Matrix Market input is always order 2")
        order = 2
        start = 1
        while start < len(lines) and (not lines[start].strip() or lines[start].startswith("%")):
            start += 1
        if start == len(lines):
            raise DataError(f"{path}: missing size line")
        size = lines[start].split()
        if len(size) != 3:
            raise DataError(f"{path}: malformed size line {lines[start]!r}")
        mm_dims = (int(size[0]), int(size[1]))
        start += 1

    rows: list[list[str]] = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        s = line.strip()
        if not s or s[0] in "%#":
            continue
        tok = s.split()
        if order is None:
            order = len(tok) - 1
        if len(tok) != order + 1:
            raise DataError(f"{path}:{lineno}: expected {order + 1} tokens, got {len(tok)}")
        rows.append(tok)
    if not rows:
        raise DataError(f"{path}: no entries")
    assert order is not None

    try:
        idx = np.array([[int(t) for t in r[:order]] for r in rows], dtype=np.int64)
        val = np.array([float(r[order]) for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: malformed line ({exc})") from None
    if one_indexed:
        if (idx < 1).any():
            line = int(np.argmax((idx < 1).any(axis=1)))
            raise DataError(f"{path}: index 0 or negative in entry {line + 1} of a 1-indexed file")
        idx -= 1
    elif (idx < 0).any():
        raise DataError(f"{path}: negative index")
    if (val <= 0).any():
        bad = int(np.argmax(val <= 0))
        raise DataError(f"{path}: non-positive value {val[bad]!r} in entry {bad + 1}")

    if dims is None:
        dims = mm_dims or tuple(int(m) + 1 for m in idx.max(axis=0))
    dims = tuple(int(n) for n in dims)
    if len(dims) != order:
        raise DataError(f"dims {dims} do not match order {order}")
    if (idx >= np.asarray(dims)).any():
        raise DataError(f"{path}: index exceeds dims {dims}")
    return SparseArray(dims, idx, val)


def save_coo(data: SparseArray, path: str | Path) -> None:
    """Write 1-based COO text (values with round-trip precision)."""
    with Path(path).open("w") as fh:
        fh.write("# " + " ".join(str(n) for n in data.dims) + "\n")
        for row, v in zip(data.indices + 1, data.values):
            fh.write(" ".join(map(str, row)) + " " + repr(float(v)) + "\n")


def read_dims_comment(path: str | Path) -> tuple[int, ...] | None:
    """Dims recorded by :func:`save_coo` in the leading comment, if any."""
    with Path(path).open() as fh:
        first = fh.readline().split()
    if len(first) > 1 and first[0] == "#" and all(t.isdigit() for t in first[1:]):
        return tuple(int(t) for t in first[1:])
    return None


@dataclass
class OrderState:
    """Per-mode permutations over the padded index space.

    ``perms[d][p]`` is the original (0-based) index placed at new position
    ``p``. Values ``>= dims[d]`` are padding slots.
    """

    perms: list[np.ndarray]
    dims: tuple[int, ...]

    def __post_init__(self):
        self.perms = [np.asarray(p, dtype=np.int64) for p in self.perms]
        self.dims = tuple(int(n) for n in self.dims)
        if len(self.perms) != len(self.dims):
            raise DataError("one permutation per mode required")
        for p, n in zip(self.perms, self.dims):
            size = 1 << padded_log_dim(n)
            if p.shape != (size,) or not np.array_equal(np.sort(p), np.arange(size)):
                raise DataError(f"permutation of length {len(p)} is not a bijection on [{size}]")

    @classmethod
    def identity(cls, dims: Sequence[int]) -> "OrderState":
        return cls([np.arange(1 << padded_log_dim(n)) for n in dims], tuple(dims))

    def inverse_perms(self) -> list[np.ndarray]:
        out = []
        for p in self.perms:
            inv = np.empty_like(p)
            inv[p] = np.arange(p.size)
            out.append(inv)
        return out

    def inverse(self) -> "OrderState":
        return OrderState(self.inverse_perms(), self.dims)

    def positions(self, data: SparseArray) -> np.ndarray:
        """New (model-space) positions of every stored entry, 0-based."""
        check_orders(data, self)
        inv = self.inverse_perms()
        pos = np.empty_like(data.indices)
        for d, ip in enumerate(inv):
            pos[:, d] = ip[data.indices[:, d]]
        return pos

    def copy(self) -> "OrderState":
        return OrderState([p.copy() for p in self.perms], self.dims)

    def swap(self, mode: int, a: np.ndarray, b: np.ndarray) -> None:
        """Swap the contents of positions ``a[i]`` and ``b[i]`` in ``mode``."""
        p = self.perms[mode]
        p[a], p[b] = p[b], p[a].copy()


def check_orders(data: SparseArray, orders: OrderState) -> None:
    if len(orders.perms) != data.order:
        raise DataError(f"orders have {len(orders.perms)} modes, data has {data.order}")
    for d, (p, l) in enumerate(zip(orders.perms, data.padded_log_dims)):
        if p.size != 1 << l:
            raise DataError(f"mode {d}: permutation length {p.size} != padded dim {1 << l}")


def apply_order(data: SparseArray, orders: OrderState) -> SparseArray:
    """Relabel entries so the one with original index ``perms[d][p]`` sits at ``p``.

    The result keeps ``orders.dims`` as logical dims when every relabelled
    index fits inside them and otherwise widens the mode to its padded size.
    """
    pos = orders.positions(data)
    dims = []
    for d, n in enumerate(orders.dims):
        fits = pos.shape[0] == 0 or pos[:, d].max() < n
        dims.append(n if fits else 1 << data.padded_log_dims[d])
    return SparseArray(tuple(dims), pos, data.values)


def save_orders(orders: OrderState, path: str | Path) -> None:
    """One line per mode: 1-based original indices in new order, 0 for padding."""
    with Path(path).open("w") as fh:
        for p, n in zip(orders.perms, orders.dims):
            out = np.where(p < n, p + 1, 0)
            fh.write(" ".join(map(str, out)) + "\n")


def load_orders(path: str | Path) -> OrderState:
    perms, dims = [], []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                raw = np.array([int(t) for t in line.split()], dtype=np.int64)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer token") from None
            n = int((raw > 0).sum())
            if n == 0 or (1 << padded_log_dim(n)) != raw.size:
                raise DataError(f"{path}:{lineno}: {raw.size} slots do not match {n} real indices")
            if (raw < 0).any() or not np.array_equal(np.sort(raw[raw > 0]), np.arange(1, n + 1)):
                raise DataError(f"{path}:{lineno}: not a permutation of 1..{n}")
            p = raw - 1
            pad = np.flatnonzero(raw == 0)
            p[pad] = n + np.arange(pad.size)
            perms.append(p)
            dims.append(n)
    if not perms:
        raise DataError(f"{path}: empty permutation file")
    return OrderState(perms, tuple(dims))


@dataclass(frozen=True)
class ApproxReport:
    sq_error: float
    fitness: float

    def to_dict(self) -> dict:
        return {"sq_error": self.sq_error, "fitness": self.fitness}


def fitness(sq_error: float, value_sq_sum: float) -> float:
    """``1 - ||X - X~||_F / ||X||_F``; ``-inf`` style values are not clipped."""
    if value_sq_sum <= 0:
        return 1.0 if sq_error <= 0 else -math.inf
    return 1.0 - math.sqrt(max(sq_error, 0.0)) / math.sqrt(value_sq_sum)


def report(sq_error: float, data: SparseArray) -> ApproxReport:
    return ApproxReport(float(sq_error), fitness(sq_error, data.value_sq_sum))


def exact_error(
    data: SparseArray,
    approx: Callable[[np.ndarray], np.ndarray],
    dense_cap: int = 1 << 22,
) -> ApproxReport:
    """Brute-force squared error over every padded cell, zeros included.

    ``approx`` receives an ``(n, D)`` array of 1-based positions and returns
    the approximated values.
    """
    cells = math.prod(data.padded_dims)
    if cells > dense_cap:
        raise DataError(f"{cells} padded cells exceed dense cap {dense_cap}")
    grid = np.indices(data.padded_dims).reshape(data.order, -1).T
    xt = np.asarray(approx(grid + 1), dtype=np.float64).reshape(data.padded_dims)
    diff = data.to_dense(padded=True) - xt
    return report(float(np.sum(diff * diff)), data)
