"""Leverage-score sketching of Khatri-Rao products.

A row of ``Z = A_d (.) ... (.) A_1`` is addressed by its multi-index
``(i_1, ..., i_d)`` and sampled with probability ``prod_k p_k[i_k]`` where
``p_k`` are the normalized leverage scores of ``A_k``.  Multi-indices are
0-based ``(s, d)`` integer arrays throughout this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kernels import leverage_scores
from .sparse_tensor import ravel_index

__all__ = [
    "ModeDistribution",
    "DetSet",
    "SketchPlan",
    "draw_multi_index",
    "draw_multi_indices",
    "didx",
    "sidx",
    "cidx",
    "skrp_lev",
    "format_plan",
]

DIDX_CANDIDATE_CAP = 10**7
ACCEPTANCE_FLOOR = 1e-6
MAX_REJECTION_ROUNDS = 100
MAX_ROUND_DRAWS = 2**22


class ModeDistribution:
    """Independent per-mode multinomial distributions.

    Sampling uses cumulative sums and binary search.
    """

    def __init__(self, probs: Sequence[np.ndarray]):
        self.probs = []
        self._cdfs = []
        for k, p in enumerate(probs):
            p = np.asarray(p, dtype=np.float64).ravel()
            if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
                raise ValueError(f"mode {k}: invalid probabilities")
            if abs(p.sum() - 1.0) > 1e-10:
                raise ValueError(f"mode {k}: probabilities sum to {p.sum()!r}, not 1")
            p.setflags(write=False)
            cdf = np.cumsum(p)
            cdf /= cdf[-1]
            self.probs.append(p)
            self._cdfs.append(cdf)

    @classmethod
    def from_factors(cls, factors: Sequence[np.ndarray]) -> "ModeDistribution":
        """``p_k = leverage(A_k) / rank(A_k)`` for each factor."""
        return cls([mode_probabilities(A) for A in factors])

    @property
    def ndim(self) -> int:
        return len(self.probs)

    @property
    def sizes(self) -> tuple:
        return tuple(p.shape[0] for p in self.probs)

    def subset(self, modes: Sequence[int]) -> "ModeDistribution":
        out = ModeDistribution.__new__(ModeDistribution)
        out.probs = [self.probs[k] for k in modes]
        out._cdfs = [self._cdfs[k] for k in modes]
        return out

    def prob(self, idx: np.ndarray) -> np.ndarray:
        """Joint probability of each 0-based multi-index row."""
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, self.ndim)
        out = np.ones(idx.shape[0])
        for k, p in enumerate(self.probs):
            out *= p[idx[:, k]]
        return out

    def draw(self, size: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty((size, self.ndim), dtype=np.int64)
        for k, cdf in enumerate(self._cdfs):
            u = rng.random(size)
            out[:, k] = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.shape[0] - 1)
        return out


def mode_probabilities(A: np.ndarray) -> np.ndarray:
    scores, rank = leverage_scores(A, return_rank=True)
    if rank == 0:
        return np.full(A.shape[0], 1.0 / A.shape[0])
    return scores / scores.sum()


def draw_multi_indices(dist: ModeDistribution, size: int, rng: np.random.Generator) -> np.ndarray:
    return dist.draw(size, rng)


def draw_multi_index(dist: ModeDistribution, rng: np.random.Generator) -> tuple:
    return tuple(int(i) for i in dist.draw(1, rng)[0])


@dataclass(frozen=True)
class DetSet:
    """Multi-indices with probability above the threshold, most probable first."""

    idx: np.ndarray
    probs: np.ndarray
    p_det: float

    @property
    def count(self) -> int:
        return int(self.idx.shape[0])


def _empty_det(d: int) -> DetSet:
    return DetSet(np.zeros((0, d), dtype=np.int64), np.zeros(0), 0.0)


def didx(dist: ModeDistribution, tau: float, cap: int = DIDX_CANDIDATE_CAP) -> DetSet:
    """All multi-indices with ``p_i > tau``, without touching all ``N`` rows.

    Each mode is pruned to the rows that could still reach ``tau`` when
    paired with the most probable rows of every other mode; only the product
    of the surviving candidates is checked exhaustively.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    d = dist.ndim
    alphas = [float(p.max()) for p in dist.probs]
    alpha_star = math.prod(alphas)
    if tau >= 1.0 or alpha_star <= tau:
        return _empty_det(d)
    # slack keeps rounding in the product from pruning a true member
    cands = [
        np.flatnonzero(p > tau * a / alpha_star * (1.0 - 1e-12))
        for p, a in zip(dist.probs, alphas)
    ]
    count = math.prod(len(c) for c in cands)
    if count > cap:
        raise ValueError(
            f"deterministic candidate set has {count} combinations (cap {cap}); use a larger tau"
        )
    if count == 0:
        return _empty_det(d)
    grids = np.meshgrid(*cands, indexing="ij")
    idx = np.stack([g.ravel(order="F") for g in grids], axis=1)
    probs = dist.prob(idx)
    keep = probs > tau
    idx, probs = idx[keep], probs[keep]
    order = np.argsort(-probs, kind="stable")
    idx, probs = idx[order], probs[order]
    return DetSet(idx, probs, float(math.fsum(probs)))


def sidx(
    dist: ModeDistribution,
    s_rnd: int,
    tau: float,
    p_det: float,
    rng: np.random.Generator,
    floor: float = ACCEPTANCE_FLOOR,
    max_rounds: int = MAX_REJECTION_ROUNDS,
    max_draws: int = MAX_ROUND_DRAWS,
):
    """Draw ``s_rnd`` multi-indices with ``p_i <= tau`` by bulk rejection.

    Each round draws at most ``max_draws`` candidates. When the acceptance
    rate is so low that a round would exceed this and the full index space
    has at most ``max_draws`` rows, the conditional distribution is sampled
    directly instead.

    Returns
    -------
    idx : (s_rnd, d) multi-indices in draw order.
    wgt : ``sqrt((1 - p_det) / (p_i * s_rnd))`` per draw.
    probs : ``p_i`` per draw.
    """
    d = dist.ndim
    if s_rnd <= 0:
        return np.zeros((0, d), dtype=np.int64), np.zeros(0), np.zeros(0)
    accept = 1.0 - p_det
    if accept < floor:
        raise ValueError(f"acceptance probability {accept:.3g} below floor {floor:g}; use a larger tau")
    # nothing can be rejected when no row exceeds tau
    rejecting = tau < 1.0 and p_det > 0.0
    factor = math.ceil(1.1 / accept) if rejecting else 1
    if rejecting and s_rnd * factor > max_draws and math.prod(dist.sizes) <= max_draws:
        idx, probs = _draw_below_tau(dist, s_rnd, tau, rng)
        return idx, np.sqrt(accept / (probs * s_rnd)), probs
    chunks, pchunks = [], []
    got = 0
    for _ in range(max_rounds):
        need = s_rnd - got
        draws = dist.draw(min(need * factor, max(need, max_draws)), rng)
        probs = dist.prob(draws)
        if rejecting:
            ok = probs <= tau
            draws, probs = draws[ok][:need], probs[ok][:need]
        chunks.append(draws)
        pchunks.append(probs)
        got += draws.shape[0]
        if got == s_rnd:
            break
    else:
        raise RuntimeError(f"rejection sampling fell short after {max_rounds} rounds")
    idx = np.concatenate(chunks)
    probs = np.concatenate(pchunks)
    wgt = np.sqrt(accept / (probs * s_rnd))
    return idx, wgt, probs


def _draw_below_tau(dist: ModeDistribution, n: int, tau: float, rng: np.random.Generator):
    """Exact draws from the product distribution restricted to ``p_i <= tau``."""
    flat = dist.probs[0]
    for p in dist.probs[1:]:
        # first index fastest, matching the column-major linear index
        flat = np.outer(p, flat).ravel()
    flat = np.where(flat > tau, 0.0, flat)
    cdf = np.cumsum(flat)
    lin = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    lin = np.minimum(lin, flat.size - 1)
    idx = np.stack(np.unravel_index(lin, dist.sizes, order="F"), axis=1).astype(np.int64)
    return idx, dist.prob(idx)


def cidx(idx: np.ndarray, wgt: np.ndarray):
    """Merge repeated multi-indices, keeping first-occurrence order.

    A row drawn ``c`` times with weight ``w`` becomes one row of weight
    ``w * sqrt(c)``; in general the merged weight is the root of the summed
    squared weights, which keeps ``||Omega x||`` unchanged for every ``x``.

    Returns
    -------
    (idx_unique, wgt_combined, counts)
    """
    idx = np.asarray(idx, dtype=np.int64)
    wgt = np.asarray(wgt, dtype=np.float64)
    if idx.shape[0] == 0:
        return idx.copy(), wgt.copy(), np.zeros(0, dtype=np.int64)
    _, first, inv, counts = np.unique(
        idx, axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    inv = inv.ravel()
    sq = np.bincount(inv, weights=wgt * wgt, minlength=first.shape[0])
    order = np.argsort(first, kind="stable")
    return idx[first[order]], np.sqrt(sq[order]), counts[order].astype(np.int64)


@dataclass(frozen=True)
class SketchPlan:
    """Sampled rows and weights for one sketched least-squares solve.

    The first ``s_det`` rows are the deterministic ones (weight 1).
    ``counts`` is the multiplicity of each row among the random draws
    (1 for deterministic rows, and for every row when not combined).
    """

    idx: np.ndarray
    wgt: np.ndarray
    probs: np.ndarray
    counts: np.ndarray
    s_det: int
    p_det: float
    s_rnd: int
    s_requested: int
    combined: bool = True

    @property
    def s_bar(self) -> int:
        return int(self.idx.shape[0])

    def linear_indices(self, sizes: Sequence[int]) -> np.ndarray:
        """0-based column-major linear index of every row."""
        return ravel_index(self.idx, sizes)


def skrp_lev(
    dist: ModeDistribution,
    s: int,
    tau: float,
    rng: np.random.Generator,
    combine: bool = True,
    cap: int = DIDX_CANDIDATE_CAP,
    floor: float = ACCEPTANCE_FLOOR,
) -> SketchPlan:
    """Hybrid deterministic/random leverage-score sample of a KRP.

    ``tau = 1`` gives pure random sampling; ``tau = 1/s`` is the usual
    hybrid setting.
    """
    if s < 1:
        raise ValueError("s must be at least 1")
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    det = didx(dist, tau, cap=cap)
    if det.count >= s:
        keep = slice(0, s)
        det = DetSet(det.idx[keep], det.probs[keep], float(math.fsum(det.probs[keep])))
        s_rnd = 0
    elif 1.0 - det.p_det < floor:
        # (almost) all mass is deterministic; nothing left to sample
        s_rnd = 0
    else:
        s_rnd = s - det.count
    ridx, rwgt, rprobs = sidx(dist, s_rnd, tau, det.p_det, rng, floor=floor)
    if combine:
        ridx, rwgt, rcounts = cidx(ridx, rwgt)
        rprobs = dist.prob(ridx)
    else:
        rcounts = np.ones(ridx.shape[0], dtype=np.int64)
    return SketchPlan(
        idx=np.concatenate([det.idx, ridx]),
        wgt=np.concatenate([np.ones(det.count), rwgt]),
        probs=np.concatenate([det.probs, rprobs]),
        counts=np.concatenate([np.ones(det.count, dtype=np.int64), rcounts]),
        s_det=det.count,
        p_det=det.p_det,
        s_rnd=s_rnd,
        s_requested=s,
        combined=combine,
    )


def format_plan(plan: SketchPlan) -> str:
    """One line per row: 1-based multi-index, weight, det/rnd, multiplicity."""
    lines = []
    for j in range(plan.s_bar):
        kind = "det" if j < plan.s_det else "rnd"
        mi = " ".join(str(int(i) + 1) for i in plan.idx[j])
        lines.append(f"{mi} {float(plan.wgt[j])!r} {kind} {int(plan.counts[j])}")
    return "\n".join(lines) + ("\n" if lines else "")
