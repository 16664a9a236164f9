"""Coordinate-format sparse tensors and fiber extraction.

Subscripts are held 0-based in ``subs``; the FROSTT reader/writer and
``coords`` / ``to_linear`` / ``from_linear`` speak the 1-based convention of
the file format.  Linear indices follow the column-major (first index
fastest) convention, so the linear index of ``(i_1, ..., i_d)`` over sizes
``(n_1, ..., n_d)`` is ``i_1 + n_1 (i_2 - 1) + n_1 n_2 (i_3 - 1) + ...``.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO, Union

import numpy as np
from scipy import sparse

from .exceptions import FrosttFormatError

INT64_MAX = np.iinfo(np.int64).max

__all__ = [
    "SparseTensor",
    "FiberIndex",
    "parse_frostt",
    "read_frostt",
    "write_frostt",
    "to_linear",
    "from_linear",
    "ravel_index",
    "precompute_mode_linearization",
    "tnsr_samp",
    "frob_norm",
    "save_linearization",
    "load_linearization",
]


def _strides(shape: Sequence[int]) -> list:
    strides = []
    acc = 1
    for n in shape:
        strides.append(acc)
        acc *= int(n)
    return strides


def ravel_index(subs: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Column-major linear index of 0-based subscript rows.

    Returns an ``int64`` array when ``prod(shape)`` fits, otherwise an
    object array of exact Python integers.
    """
    subs = np.asarray(subs)
    if subs.ndim == 1:
        subs = subs[:, None]
    total = math.prod(int(n) for n in shape)
    strides = _strides(shape)
    if total - 1 <= INT64_MAX:
        out = np.zeros(subs.shape[0], dtype=np.int64)
        for k, st in enumerate(strides):
            out += subs[:, k].astype(np.int64) * np.int64(st)
        return out
    out = np.zeros(subs.shape[0], dtype=object)
    for k, st in enumerate(strides):
        out = out + subs[:, k].astype(object) * st
    return out


def unravel_index(lin: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`ravel_index` (0-based in, 0-based out)."""
    lin = np.asarray(lin)
    big = lin.dtype == object
    rem = lin.copy()
    out = np.empty((lin.shape[0], len(shape)), dtype=np.int64)
    for k, n in enumerate(shape):
        if big:
            out[:, k] = np.array([int(v) % int(n) for v in rem], dtype=np.int64)
            rem = np.array([int(v) // int(n) for v in rem], dtype=object)
        else:
            out[:, k] = rem % n
            rem = rem // n
    return out


def to_linear(multi: Sequence[int], shape: Sequence[int]) -> int:
    """Map a 1-based multi-index to its 1-based linear index.

    >>> to_linear((2, 3), (2, 3))
    6
    """
    if len(multi) != len(shape):
        raise ValueError(f"multi-index has {len(multi)} entries, shape has {len(shape)}")
    lin = 1
    stride = 1
    for i, n in zip(multi, shape):
        i = int(i)
        if not 1 <= i <= int(n):
            raise IndexError(f"index {i} out of range [1, {n}]")
        lin += stride * (i - 1)
        stride *= int(n)
    return lin


def from_linear(lin: int, shape: Sequence[int]) -> tuple:
    """Map a 1-based linear index back to its 1-based multi-index."""
    total = math.prod(int(n) for n in shape)
    lin = int(lin)
    if not 1 <= lin <= total:
        raise IndexError(f"linear index {lin} out of range [1, {total}]")
    rem = lin - 1
    out = []
    for n in shape:
        out.append(rem % int(n) + 1)
        rem //= int(n)
    return tuple(out)


@dataclass(frozen=True)
class FiberIndex:
    """Lookup structure from an excluded-mode linear index to its fiber.

    ``keys`` holds the sorted distinct fiber indices; the nonzeros of fiber
    ``keys[f]`` are ``order[ptr[f]:ptr[f + 1]]``.
    """

    keys: np.ndarray
    ptr: np.ndarray
    order: np.ndarray

    @classmethod
    def build(cls, lin: np.ndarray) -> "FiberIndex":
        order = np.argsort(lin, kind="stable")
        sorted_lin = lin[order]
        if sorted_lin.size:
            starts = np.flatnonzero(np.r_[True, sorted_lin[1:] != sorted_lin[:-1]])
        else:
            starts = np.zeros(0, dtype=np.int64)
        keys = sorted_lin[starts]
        ptr = np.r_[starts, sorted_lin.size].astype(np.int64)
        return cls(keys=keys, ptr=ptr, order=order)

    @property
    def n_fibers(self) -> int:
        return int(self.keys.shape[0])


@dataclass(frozen=True, eq=False)
class SparseTensor:
    """Immutable sparse tensor in coordinate format.

    Parameters
    ----------
    subs : (nnz, m) int array of 0-based subscripts.
    vals : (nnz,) float array of nonzero values.
    shape : mode sizes.
    """

    subs: np.ndarray
    vals: np.ndarray
    shape: tuple
    mode_lin: Optional[tuple] = field(default=None, repr=False)
    fibers: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        if not shape or any(n < 1 for n in shape):
            raise ValueError(f"invalid shape {self.shape}")
        subs = np.asarray(self.subs, dtype=np.int64)
        vals = np.asarray(self.vals, dtype=np.float64).ravel()
        if subs.size == 0:
            subs = subs.reshape(0, len(shape))
        if subs.ndim != 2 or subs.shape[1] != len(shape):
            raise ValueError(f"subs must be (nnz, {len(shape)}), got {subs.shape}")
        if subs.shape[0] != vals.shape[0]:
            raise ValueError("subs and vals disagree on nnz")
        if subs.size and (subs.min() < 0 or np.any(subs.max(axis=0) >= np.array(shape))):
            raise IndexError("subscript out of range")
        if np.any(vals == 0):
            raise ValueError("explicit zero values are not stored")
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite values")
        subs.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "subs", subs)
        object.__setattr__(self, "vals", vals)
        if self.mode_lin is None:
            _check_unique(subs, shape)

    @classmethod
    def from_coords(cls, coords, vals, shape) -> "SparseTensor":
        """Build from 1-based coordinates."""
        coords = np.asarray(coords, dtype=np.int64)
        if coords.size and coords.min() < 1:
            raise IndexError("coordinates are 1-based")
        return cls(coords - 1, vals, shape)

    @classmethod
    def from_dense(cls, array: np.ndarray) -> "SparseTensor":
        array = np.asarray(array, dtype=np.float64)
        subs = np.argwhere(array != 0)
        return cls(subs, array[tuple(subs.T)], array.shape)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def nnz(self) -> int:
        return int(self.vals.shape[0])

    @property
    def coords(self) -> np.ndarray:
        """1-based coordinates."""
        return self.subs + 1

    @property
    def numel(self) -> int:
        """Total number of positions, as an exact integer."""
        return math.prod(self.shape)

    def full(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[tuple(self.subs.T)] = self.vals
        return out

    def linearized(self, mode: int) -> np.ndarray:
        if self.mode_lin is None:
            raise ValueError("mode linearization has not been precomputed")
        _check_mode(mode, self.ndim)
        return self.mode_lin[mode]

    def fiber_index(self, mode: int) -> FiberIndex:
        if self.fibers is None:
            raise ValueError("mode linearization has not been precomputed")
        _check_mode(mode, self.ndim)
        return self.fibers[mode]


def _check_mode(mode: int, ndim: int) -> None:
    if not 0 <= mode < ndim:
        raise IndexError(f"mode {mode} out of range for a {ndim}-way tensor")


def _check_unique(subs: np.ndarray, shape: tuple) -> None:
    if subs.shape[0] < 2:
        return
    order = np.lexsort(subs.T[::-1])
    s = subs[order]
    dup = np.all(s[1:] == s[:-1], axis=1)
    if np.any(dup):
        j = int(np.flatnonzero(dup)[0])
        raise ValueError(f"duplicate coordinate {tuple(int(v) + 1 for v in s[j])}")


def other_modes(ndim: int, mode: int) -> list:
    return [j for j in range(ndim) if j != mode]


def fiber_linear_index(multi: np.ndarray, shape: Sequence[int], mode: int) -> np.ndarray:
    """Linear index over all modes except ``mode`` of 0-based ``multi``.

    ``multi`` has one column per remaining mode, in increasing mode order.
    """
    rest = [shape[j] for j in other_modes(len(shape), mode)]
    return ravel_index(multi, rest)


def precompute_mode_linearization(t: SparseTensor) -> SparseTensor:
    """Return ``t`` with per-mode excluded-mode linear indices and fiber maps."""
    lins = []
    fibers = []
    for k in range(t.ndim):
        rest = other_modes(t.ndim, k)
        width = math.prod(t.shape[j] for j in rest)
        if width - 1 > INT64_MAX:
            raise OverflowError(
                f"mode {k}: product of remaining mode sizes {width} exceeds int64"
            )
        lin = ravel_index(t.subs[:, rest], [t.shape[j] for j in rest]) if rest else (
            np.zeros(t.nnz, dtype=np.int64)
        )
        lin.setflags(write=False)
        lins.append(lin)
        fibers.append(FiberIndex.build(lin))
    return SparseTensor(t.subs, t.vals, t.shape, mode_lin=tuple(lins), fibers=tuple(fibers))


def tnsr_samp(t: SparseTensor, mode: int, idx: np.ndarray, wgt: np.ndarray) -> sparse.csr_matrix:
    """Gather weighted mode-``mode`` fibers as rows of a sparse matrix.

    Row ``j`` holds ``wgt[j] * X(..., :, ...)`` for the fiber whose
    excluded-mode linear index is ``idx[j]``.  Fibers without nonzeros give
    empty rows.
    """
    fib = t.fiber_index(mode)
    idx = np.asarray(idx, dtype=np.int64).ravel()
    wgt = np.asarray(wgt, dtype=np.float64).ravel()
    if idx.shape != wgt.shape:
        raise ValueError("idx and wgt must have the same length")
    n = t.shape[mode]
    uniq, inv = np.unique(idx, return_inverse=True)
    lo = np.searchsorted(fib.keys, uniq, side="left")
    found = lo < fib.n_fibers
    found[found] = fib.keys[lo[found]] == uniq[found]
    lengths = np.zeros(uniq.shape[0], dtype=np.int64)
    starts = np.zeros(uniq.shape[0], dtype=np.int64)
    hit = lo[found]
    lengths[found] = fib.ptr[hit + 1] - fib.ptr[hit]
    starts[found] = fib.ptr[hit]
    total = int(lengths.sum())
    if total:
        offs = np.repeat(starts - np.r_[0, np.cumsum(lengths)[:-1]], lengths) + np.arange(total)
        nz = fib.order[offs]
        cols = t.subs[nz, mode]
        data = t.vals[nz]
    else:
        cols = np.zeros(0, dtype=np.int64)
        data = np.zeros(0)
    gathered = sparse.csr_matrix(
        (data, cols, np.r_[0, np.cumsum(lengths)]), shape=(uniq.shape[0], n)
    )
    rows = gathered[inv]
    return sparse.csr_matrix(sparse.diags(wgt) @ rows)


def frob_norm(t: SparseTensor) -> float:
    return float(np.linalg.norm(t.vals))


def parse_frostt(
    stream: Union[TextIO, Iterable[str], str], shape: Optional[Sequence[int]] = None
) -> SparseTensor:
    """Read a FROSTT ``.tns`` stream.

    Explicit zeros are dropped (with a warning), duplicate coordinates are
    rejected.  Without ``shape`` the mode sizes are the per-mode maxima.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    lines = [ln for ln in stream if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise FrosttFormatError("empty input")
    width = len(lines[0].split())
    for lineno, ln in enumerate(lines, 1):
        if len(ln.split()) != width:
            raise FrosttFormatError(
                f"data line {lineno}: expected {width} tokens, got {len(ln.split())}"
            )
    if width < 2:
        raise FrosttFormatError("each line needs at least one coordinate and a value")
    try:
        data = np.loadtxt(lines, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise FrosttFormatError(f"non-numeric token: {exc}") from None
    raw = data[:, :-1]
    coords = np.rint(raw).astype(np.int64)
    if np.any(coords != raw):
        raise FrosttFormatError("coordinates must be integers")
    if coords.min() < 1:
        bad = int(np.flatnonzero(coords.min(axis=1) < 1)[0]) + 1
        raise FrosttFormatError(f"data line {bad}: coordinates are 1-based")
    vals = data[:, -1]
    inferred = tuple(int(v) for v in coords.max(axis=0))
    if shape is None:
        shape = inferred
    else:
        shape = tuple(int(v) for v in shape)
        if len(shape) != len(inferred) or any(s < m for s, m in zip(shape, inferred)):
            raise FrosttFormatError(f"shape override {shape} does not cover data {inferred}")
    zero = vals == 0
    if np.any(zero):
        warnings.warn(f"dropped {int(zero.sum())} explicit zero value(s)", stacklevel=2)
    try:
        return SparseTensor(coords[~zero] - 1, vals[~zero], shape)
    except ValueError as exc:
        raise FrosttFormatError(str(exc)) from None


def read_frostt(path, shape=None) -> SparseTensor:
    with open(path, "r") as fh:
        return parse_frostt(fh, shape=shape)


def write_frostt(t: SparseTensor, stream: TextIO) -> None:
    fmt = " ".join(["%d"] * t.ndim + ["%.17g"])
    for c, v in zip(t.coords.tolist(), t.vals.tolist()):
        stream.write(fmt % (*c, v) + "\n")


_CACHE_VERSION = 1


def save_linearization(t: SparseTensor, path) -> None:
    """Write the per-mode linear indices to a versioned ``.npz`` sidecar."""
    if t.mode_lin is None:
        raise ValueError("mode linearization has not been precomputed")
    arrays = {f"mode{k}": lin for k, lin in enumerate(t.mode_lin)}
    np.savez(
        path,
        version=np.int64(_CACHE_VERSION),
        shape=np.array(t.shape, dtype=np.int64),
        nnz=np.int64(t.nnz),
        **arrays,
    )


def load_linearization(t: SparseTensor, path) -> SparseTensor:
    with np.load(path) as f:
        if int(f["version"]) != _CACHE_VERSION:
            raise ValueError(f"unsupported linearization cache version {int(f['version'])}")
        if tuple(f["shape"].tolist()) != t.shape or int(f["nnz"]) != t.nnz:
            raise ValueError("linearization cache does not match tensor")
        lins = tuple(f[f"mode{k}"] for k in range(t.ndim))
    for lin in lins:
        lin.setflags(write=False)
    return SparseTensor(
        t.subs, t.vals, t.shape, mode_lin=lins,
        fibers=tuple(FiberIndex.build(lin) for lin in lins),
    )
