"""Dense factor-matrix kernels used by CP-ALS and the sketched solver."""

from __future__ import annotations

import warnings
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la
from scipy import sparse

from .exceptions import RankDeficiencyWarning
from .sparse_tensor import SparseTensor

__all__ = [
    "leverage_scores",
    "krp",
    "krp_samp",
    "solve_lsq",
    "gram_hadamard",
    "mttkrp",
    "normalize_columns",
]


def _rank_cutoff(s: np.ndarray, shape: tuple) -> float:
    if s.size == 0:
        return 0.0
    return max(shape) * np.finfo(np.float64).eps * s[0]


def leverage_scores(A: np.ndarray, return_rank: bool = False):
    """Leverage scores of the rows of ``A``.

    Uses a thin SVD so that rank deficiency is detected; when the numerical
    rank is below ``A.shape[1]`` only the leading singular vectors enter the
    scores (so they sum to the rank) and a :class:`RankDeficiencyWarning` is
    issued.

    Parameters
    ----------
    A : (n, r) array
    return_rank : bool
        Also return the numerical rank.
    """
    A = np.asarray(A, dtype=np.float64)
    U, s, _ = la.svd(A, full_matrices=False, lapack_driver="gesdd")
    rank = int(np.sum(s > _rank_cutoff(s, A.shape)))
    if rank < A.shape[1]:
        warnings.warn(
            f"matrix of shape {A.shape} has numerical rank {rank}",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    Q = U[:, :rank]
    scores = np.einsum("ij,ij->i", Q, Q)
    np.clip(scores, 0.0, 1.0, out=scores)
    if return_rank:
        return scores, rank
    return scores


def krp(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Explicit Khatri-Rao product with the first factor's index fastest.

    Row ``i`` (column-major linear index of ``(i_1, ..., i_d)``) equals the
    Hadamard product of the rows ``factors[k][i_k]``.  Only for small inputs.
    """
    out = np.asarray(factors[0], dtype=np.float64)
    for A in factors[1:]:
        A = np.asarray(A, dtype=np.float64)
        out = (A[:, None, :] * out[None, :, :]).reshape(-1, out.shape[1])
    return out


def krp_samp(factors: Sequence[np.ndarray], idx: np.ndarray, wgt: np.ndarray) -> np.ndarray:
    """Weighted rows of the Khatri-Rao product at 0-based multi-indices.

    Parameters
    ----------
    factors : d factor matrices sharing ``r`` columns.
    idx : (s, d) int array, column ``k`` indexing rows of ``factors[k]``.
    wgt : (s,) weights.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim == 1:
        idx = idx[:, None]
    if idx.shape[1] != len(factors):
        raise ValueError(f"multi-indices have {idx.shape[1]} modes, got {len(factors)} factors")
    out = np.repeat(np.asarray(wgt, dtype=np.float64)[:, None], factors[0].shape[1], axis=1)
    for k, A in enumerate(factors):
        col = idx[:, k]
        if col.size and (col.min() < 0 or col.max() >= A.shape[0]):
            raise IndexError(f"multi-index out of range in mode {k}")
        out *= A[col]
    return out


def solve_lsq(Zs: np.ndarray, Xs) -> np.ndarray:
    """Solve ``min_B || Zs B' - Xs ||_F`` by Householder QR.

    ``Xs`` may be dense or scipy-sparse with one column per right-hand side.
    If ``Zs`` is numerically rank deficient the minimum-norm solution is
    returned and a :class:`RankDeficiencyWarning` issued.

    Returns
    -------
    B : (n, r) array where ``n = Xs.shape[1]``.
    """
    Zs = np.asarray(Zs, dtype=np.float64)
    if Zs.shape[0] != Xs.shape[0]:
        raise ValueError(f"row mismatch: Zs {Zs.shape}, Xs {Xs.shape}")
    r = Zs.shape[1]
    Q, R = la.qr(Zs, mode="economic")
    diag = np.abs(np.diag(R))
    tol = max(Zs.shape) * np.finfo(np.float64).eps * (diag.max() if diag.size else 0.0)
    if Zs.shape[0] >= r and diag.size == r and diag.min() > tol:
        # (Xs' Q)' = Q' Xs without densifying Xs
        QtX = (Xs.T @ Q).T if sparse.issparse(Xs) else Q.T @ Xs
        return la.solve_triangular(R, QtX, lower=False).T
    warnings.warn(
        f"sampled system of shape {Zs.shape} is rank deficient; using minimum-norm solution",
        RankDeficiencyWarning,
        stacklevel=2,
    )
    dense = Xs.toarray() if sparse.issparse(Xs) else np.asarray(Xs)
    sol, *_ = la.lstsq(Zs, dense, cond=None, lapack_driver="gelsd")
    return sol.T


def gram_hadamard(factors: Sequence[np.ndarray], skip: Optional[int] = None) -> np.ndarray:
    """Hadamard product of the Gram matrices ``A' A`` of the factors.

    ``skip`` omits one factor (the mode being solved for).
    """
    r = factors[0].shape[1]
    V = np.ones((r, r))
    for k, A in enumerate(factors):
        if k == skip:
            continue
        V *= A.T @ A
    return V


def mttkrp(t: SparseTensor, factors: Sequence[np.ndarray], mode: int) -> np.ndarray:
    """Matricized sparse tensor times Khatri-Rao product for one mode.

    Equivalent to ``X_(mode) @ krp([A_j for j != mode])`` but streams over
    the nonzeros in ``O(nnz * ndim * r)``.
    """
    if len(factors) != t.ndim:
        raise ValueError(f"{len(factors)} factors for a {t.ndim}-way tensor")
    for k, A in enumerate(factors):
        if A.shape[0] != t.shape[k]:
            raise ValueError(f"factor {k} has {A.shape[0]} rows, tensor mode has {t.shape[k]}")
    r = factors[0].shape[1]
    W = np.repeat(t.vals[:, None], r, axis=1)
    for k, A in enumerate(factors):
        if k != mode:
            W *= A[t.subs[:, k]]
    n = t.shape[mode]
    out = np.zeros((n, r))
    for j in range(r):
        out[:, j] = np.bincount(t.subs[:, mode], weights=W[:, j], minlength=n)
    return out


def normalize_columns(A: np.ndarray):
    """Split ``A`` into unit-norm columns and their norms.

    Zero columns get norm 0 and are replaced by the first canonical basis
    vector so the factor keeps full column support.

    Returns
    -------
    (A_unit, lam) with ``A == A_unit * lam``.
    """
    A = np.asarray(A, dtype=np.float64)
    lam = np.linalg.norm(A, axis=0)
    out = np.empty_like(A)
    nz = lam > 0
    out[:, nz] = A[:, nz] / lam[nz]
    if not np.all(nz):
        out[:, ~nz] = 0.0
        out[0, ~nz] = 1.0
    return out, lam
