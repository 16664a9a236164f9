"""Kruskal (CP) models and their text serialization."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import List, Sequence, TextIO

import numpy as np

from .kernels import gram_hadamard, normalize_columns

__all__ = ["KruskalModel", "write_factor", "read_factor", "write_model", "read_model"]


@dataclass
class KruskalModel:
    """CP model ``[[lambda; A_1, ..., A_m]]``."""

    weights: np.ndarray
    factors: List[np.ndarray]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        self.factors = [np.asarray(A, dtype=np.float64) for A in self.factors]
        r = self.weights.shape[0]
        for k, A in enumerate(self.factors):
            if A.ndim != 2 or A.shape[1] != r:
                raise ValueError(f"factor {k} has shape {A.shape}, expected (n, {r})")

    @classmethod
    def from_factors(cls, factors: Sequence[np.ndarray]) -> "KruskalModel":
        """Absorb column norms of raw factors into the weights."""
        r = factors[0].shape[1]
        lam = np.ones(r)
        units = []
        for A in factors:
            U, nrm = normalize_columns(A)
            units.append(U)
            lam = lam * nrm
        return cls(lam, units)

    @property
    def rank(self) -> int:
        return int(self.weights.shape[0])

    @property
    def shape(self) -> tuple:
        return tuple(A.shape[0] for A in self.factors)

    @property
    def ndim(self) -> int:
        return len(self.factors)

    def normalized(self) -> "KruskalModel":
        scaled = [A.copy() for A in self.factors]
        scaled[0] = scaled[0] * self.weights
        return KruskalModel.from_factors(scaled)

    def values_at(self, subs: np.ndarray) -> np.ndarray:
        """Model entries at 0-based subscript rows."""
        subs = np.asarray(subs, dtype=np.int64)
        prod = np.repeat(self.weights[None, :], subs.shape[0], axis=0)
        for k, A in enumerate(self.factors):
            prod *= A[subs[:, k]]
        return prod.sum(axis=1)

    def norm_sq(self) -> float:
        V = gram_hadamard(self.factors)
        return float(max(self.weights @ V @ self.weights, 0.0))

    def full(self) -> np.ndarray:
        """Dense tensor; only for small shapes."""
        letters = "abcdefghijklmnopqrstuvwxy"[: self.ndim]
        spec = ",".join(f"{c}z" for c in letters) + ",z->" + letters
        return np.einsum(spec, *self.factors, self.weights)

    def copy(self) -> "KruskalModel":
        return KruskalModel(self.weights.copy(), [A.copy() for A in self.factors])


def _fmt_row(row) -> str:
    return " ".join(repr(float(v)) for v in row)


def write_factor(A: np.ndarray, stream: TextIO) -> None:
    stream.write(f"{A.shape[0]} {A.shape[1]}\n")
    for row in A:
        stream.write(_fmt_row(row) + "\n")


def read_factor(lines) -> np.ndarray:
    header = next(lines).split()
    if len(header) != 2:
        raise ValueError(f"bad factor header {header!r}")
    n, r = int(header[0]), int(header[1])
    rows = []
    for _ in range(n):
        try:
            vals = next(lines).split()
        except StopIteration:
            raise ValueError("truncated factor block") from None
        if len(vals) != r:
            raise ValueError(f"factor row has {len(vals)} values, expected {r}")
        rows.append([float(v) for v in vals])
    return np.array(rows, dtype=np.float64).reshape(n, r)


def write_model(model: KruskalModel, stream: TextIO) -> None:
    """Weights on the first line, then one factor block per mode."""
    stream.write(_fmt_row(model.weights) + "\n")
    for A in model.factors:
        write_factor(A, stream)


def read_model(stream) -> KruskalModel:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    lines = iter([ln for ln in stream if ln.strip()])
    try:
        weights = np.array([float(v) for v in next(lines).split()])
    except StopIteration:
        raise ValueError("empty model file") from None
    factors = []
    while True:
        try:
            factors.append(read_factor(lines))
        except StopIteration:
            break
    if not factors:
        raise ValueError("model file has no factor blocks")
    return KruskalModel(weights, factors)
