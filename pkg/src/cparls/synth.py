"""Synthetic low-rank tensors with concentrated leverage, and model scoring."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .kruskal import KruskalModel
from .sparse_tensor import SparseTensor

__all__ = ["SynthSpec", "gen_synthetic", "concentrated_rows", "factor_match_score"]


@dataclass
class SynthSpec:
    """Parameters for :func:`gen_synthetic`.

    The first ``n_concentrated`` factor columns are zeroed and then given
    ``spread`` nonzeros each, on disjoint rows, of size
    ``magnitude + U(0, seed_noise)``.
    """

    shape: Sequence[int] = (50, 50, 50)
    rank: int = 25
    n_concentrated: int = 3
    spread: int = 5
    magnitude: float = 3.0
    seed_noise: float = 0.05
    noise: float = 0.05
    seed: Optional[int] = None

    def __post_init__(self):
        self.shape = tuple(int(n) for n in self.shape)
        if self.rank < 1 or any(n < 1 for n in self.shape):
            raise ValueError("rank and mode sizes must be positive")
        if self.n_concentrated < 0 or self.n_concentrated > self.rank:
            raise ValueError("n_concentrated must lie in [0, rank]")
        if self.spread < 1 or self.spread * self.n_concentrated > min(self.shape):
            raise ValueError("spread * n_concentrated must not exceed the smallest mode size")
        if self.magnitude <= 0 or self.seed_noise < 0 or self.noise < 0:
            raise ValueError("magnitude must be positive and noise levels nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape)
        return d


def concentrated_rows(spec: SynthSpec) -> np.ndarray:
    """Row indices (0-based) that carry the concentrated columns."""
    return np.arange(spec.spread * spec.n_concentrated)


def gen_synthetic(spec: SynthSpec):
    """Dense rank-``r`` tensor with a few high-leverage rows per factor.

    Element-wise Gaussian noise is scaled so that
    ``||noise|| = spec.noise * ||X||``.  The result is returned in
    coordinate format with every (nonzero) entry stored.

    Returns
    -------
    (tensor, ground_truth)
    """
    rng = np.random.default_rng(spec.seed)
    factors = []
    for n in spec.shape:
        A = rng.standard_normal((n, spec.rank))
        A[:, : spec.n_concentrated] = 0.0
        for c in range(spec.n_concentrated):
            rows = slice(c * spec.spread, (c + 1) * spec.spread)
            A[rows, c] = spec.magnitude + rng.uniform(0.0, spec.seed_noise, spec.spread)
        factors.append(A)
    truth = KruskalModel.from_factors(factors)
    X = truth.full()
    if spec.noise > 0:
        N = rng.standard_normal(X.shape)
        X = X + spec.noise * np.linalg.norm(X) / np.linalg.norm(N) * N
    return SparseTensor.from_dense(X), truth


def _unit_columns(A: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(A, axis=0)
    nrm[nrm == 0] = 1.0
    return A / nrm


def factor_match_score(a: KruskalModel, b: KruskalModel) -> float:
    """Permutation- and sign-invariant similarity of two CP models.

    Columns are paired greedily by the largest
    ``(1 - |la - lb| / max(la, lb)) * prod_k |cos(a_k, b_k)|`` and the score
    is the mean over the pairs.  Both models are normalized first.
    """
    if a.rank != b.rank:
        raise ValueError(f"rank mismatch: {a.rank} vs {b.rank}")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    a, b = a.normalized(), b.normalized()
    r = a.rank
    C = np.ones((r, r))
    for Aa, Ab in zip(a.factors, b.factors):
        C *= np.abs(_unit_columns(Aa).T @ _unit_columns(Ab))
    la_, lb_ = np.abs(a.weights)[:, None], np.abs(b.weights)[None, :]
    denom = np.maximum(la_, lb_)
    penalty = 1.0 - np.divide(np.abs(la_ - lb_), denom, out=np.zeros((r, r)), where=denom > 0)
    S = penalty * C
    total = 0.0
    avail = S.copy()
    for _ in range(r):
        i, j = np.unravel_index(np.argmax(avail), avail.shape)
        total += S[i, j]
        avail[i, :] = -np.inf
        avail[:, j] = -np.inf
    return float(min(max(total / r, 0.0), 1.0))
