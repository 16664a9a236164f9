"""CP-ARLS-LEV and CP-ALS drivers, fit computation, and initialization."""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, TextIO

import numpy as np
import scipy.linalg as la

from .exceptions import NumericalError, RankDeficiencyWarning
from .kernels import gram_hadamard, krp_samp, mttkrp, normalize_columns, solve_lsq
from .kruskal import KruskalModel
from .sampling import ModeDistribution, mode_probabilities, skrp_lev
from .sparse_tensor import (
    SparseTensor,
    fiber_linear_index,
    frob_norm,
    other_modes,
    precompute_mode_linearization,
    ravel_index,
    tnsr_samp,
)

__all__ = [
    "SolverConfig",
    "TraceRecord",
    "FitEstimator",
    "cp_arls_lev",
    "cp_als",
    "exact_fit",
    "build_fit_estimator",
    "estimated_fit",
    "gaussian_init",
    "rrf_init",
    "initial_model",
    "lsq_residual_sq",
    "exact_lsq_solution",
    "residual_rel_diff",
    "write_trace_csv",
]


@dataclass
class SolverConfig:
    """Settings for :func:`cp_arls_lev`.

    ``tau=1`` is pure random sampling; pass ``1/samples`` for the hybrid
    sampler.
    """

    rank: int
    samples: int
    tau: float = 1.0
    epoch_size: int = 5
    fail_epochs: int = 3
    tol: float = 1e-4
    max_epochs: int = 50
    fit_mode: str = "exact"
    fit_samples: int = 2**17
    fit_alpha: float = 0.5
    init: str = "gaussian"
    init_samples: int = 10**5
    seed: Optional[int] = None

    def __post_init__(self):
        for name in ("rank", "samples", "epoch_size", "fail_epochs", "max_epochs", "fit_samples"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if not 0.0 < self.fit_alpha < 1.0:
            raise ValueError("fit_alpha must lie in (0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.fit_mode not in ("exact", "estimated"):
            raise ValueError(f"unknown fit mode {self.fit_mode!r}")
        if self.init not in ("gaussian", "rrf"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class TraceRecord:
    epoch: int
    time_s: float
    fit: float
    fit_kind: str
    s_bar: List[float] = field(default_factory=list)
    s_det: List[int] = field(default_factory=list)
    p_det: List[float] = field(default_factory=list)


TRACE_HEADER = ["epoch", "time_s", "fit", "fit_kind", "mode", "s_bar", "s_det", "p_det"]


def write_trace_csv(traces: Sequence[TraceRecord], stream: TextIO, with_time: bool = True) -> None:
    """One row per (epoch, mode); ALS records leave the sampling columns blank."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for rec in traces:
        tcol = repr(rec.time_s) if with_time else ""
        if not rec.s_bar:
            w.writerow([rec.epoch, tcol, repr(rec.fit), rec.fit_kind, "", "", "", ""])
            continue
        for k, (sb, sd, pd) in enumerate(zip(rec.s_bar, rec.s_det, rec.p_det)):
            w.writerow([rec.epoch, tcol, repr(rec.fit), rec.fit_kind, k + 1, repr(sb), sd, repr(pd)])


# --- fit -------------------------------------------------------------------


def exact_fit(t: SparseTensor, model: KruskalModel) -> float:
    """``1 - ||X - M|| / ||X||`` without forming either tensor densely."""
    nx2 = float(t.vals @ t.vals)
    if nx2 == 0:
        raise ValueError("fit is undefined for an all-zero tensor")
    inner = float(t.vals @ model.values_at(t.subs))
    resid2 = max(nx2 - 2.0 * inner + model.norm_sq(), 0.0)
    return 1.0 - math.sqrt(resid2) / math.sqrt(nx2)


@dataclass(frozen=True)
class FitEstimator:
    """Frozen stratified sample of tensor positions.

    The first ``n_nonzero`` rows of ``subs`` are nonzeros of the tensor, the
    remaining ``n_zero`` rows are zero positions.
    """

    subs: np.ndarray
    x: np.ndarray
    phi: np.ndarray
    n_nonzero: int
    n_zero: int
    norm_x: float

    def residual_sq(self, model: KruskalModel) -> float:
        m = model.values_at(self.subs)
        return float(self.phi @ (m - self.x) ** 2)


def _sorted_membership(keys_sorted: np.ndarray, q: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(keys_sorted, q)
    pos = np.minimum(pos, keys_sorted.shape[0] - 1)
    return keys_sorted[pos] == q


def _sample_zero_positions(t: SparseTensor, count: int, replace: bool, rng) -> np.ndarray:
    shape = np.array(t.shape, dtype=np.int64)
    nz_lin = ravel_index(t.subs, t.shape)
    big = nz_lin.dtype == object
    nz_set = set(nz_lin.tolist()) if big else None
    nz_sorted = np.sort(nz_lin) if not big else None
    zero_frac = 1.0 - t.nnz / t.numel
    taken: set = set()
    out = []
    got = 0
    rounds = 0
    while got < count:
        rounds += 1
        if rounds > 10000:
            raise RuntimeError("zero-position rejection sampling did not converge")
        batch = max(64, int(1.2 * (count - got) / zero_frac) + 1)
        cand = (rng.random((batch, t.ndim)) * shape).astype(np.int64)
        cand = np.minimum(cand, shape - 1)
        lin = ravel_index(cand, t.shape)
        if big:
            ok = np.array([v not in nz_set for v in lin.tolist()], dtype=bool)
        elif t.nnz:
            ok = ~_sorted_membership(nz_sorted, lin)
        else:
            ok = np.ones(batch, dtype=bool)
        for row, key in zip(cand[ok], lin[ok].tolist()):
            if not replace:
                if key in taken:
                    continue
                taken.add(key)
            out.append(row)
            got += 1
            if got == count:
                break
    return np.array(out, dtype=np.int64).reshape(-1, t.ndim)


def build_fit_estimator(
    t: SparseTensor, s_fit: int, alpha: float, rng: np.random.Generator
) -> FitEstimator:
    """Stratified sample of nonzero and zero positions for fit estimates.

    ``ceil(alpha * s_fit)`` nonzeros are drawn uniformly (without
    replacement while possible) and the rest are zeros found by rejection
    sampling uniform positions.
    """
    if t.nnz == 0:
        raise ValueError("fit is undefined for an all-zero tensor")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    n_nz = max(1, math.ceil(alpha * s_fit - 1e-9))
    n_z = max(0, s_fit - n_nz)
    pick = rng.choice(t.nnz, size=n_nz, replace=n_nz > t.nnz)
    zeros_total = t.numel - t.nnz
    if zeros_total == 0 and n_z:
        warnings.warn("tensor has no zero entries; zero stratum is empty", RuntimeWarning, stacklevel=2)
        n_z = 0
    zsubs = _sample_zero_positions(t, n_z, replace=n_z > zeros_total, rng=rng) if n_z else (
        np.zeros((0, t.ndim), dtype=np.int64)
    )
    subs = np.concatenate([t.subs[pick], zsubs])
    x = np.concatenate([t.vals[pick], np.zeros(n_z)])
    phi = np.concatenate([
        np.full(n_nz, t.nnz / n_nz),
        np.full(n_z, float(zeros_total) / n_z if n_z else 0.0),
    ])
    return FitEstimator(subs=subs, x=x, phi=phi, n_nonzero=n_nz, n_zero=n_z, norm_x=frob_norm(t))


def estimated_fit(est: FitEstimator, model: KruskalModel) -> float:
    F = max(est.residual_sq(model), 0.0)
    return 1.0 - math.sqrt(F) / est.norm_x


# --- initialization --------------------------------------------------------


def gaussian_init(shape: Sequence[int], rank: int, rng: np.random.Generator) -> KruskalModel:
    """Factors with i.i.d. standard normal entries and unit weights."""
    return KruskalModel(np.ones(rank), [rng.standard_normal((n, rank)) for n in shape])


def rrf_init(t: SparseTensor, mode: int, rank: int, s_init: int, rng: np.random.Generator) -> np.ndarray:
    """Random Gaussian combinations of sampled nonempty mode-``mode`` fibers.

    At most ``s_init`` distinct fibers are drawn uniformly from the nonempty
    ones.
    """
    fib = t.fiber_index(mode)
    if fib.n_fibers < 1:
        raise ValueError(f"mode {mode} has no nonempty fibers")
    m = min(int(s_init), fib.n_fibers)
    chosen = fib.keys[rng.choice(fib.n_fibers, size=m, replace=False)]
    S = tnsr_samp(t, mode, chosen, np.ones(m))
    G = rng.standard_normal((m, rank))
    return np.asarray(S.T @ G)


def initial_model(t: SparseTensor, rank: int, method: str, rng, s_init: int = 10**5) -> KruskalModel:
    if method == "gaussian":
        return gaussian_init(t.shape, rank, rng)
    if method == "rrf":
        if t.mode_lin is None:
            t = precompute_mode_linearization(t)
        return KruskalModel(np.ones(rank), [rrf_init(t, k, rank, s_init, rng) for k in range(t.ndim)])
    raise ValueError(f"unknown init {method!r}")


# --- drivers ---------------------------------------------------------------


def _check_init(t: SparseTensor, init: KruskalModel, rank: int) -> None:
    if init.shape != t.shape:
        raise ValueError(f"initial model shape {init.shape} does not match tensor {t.shape}")
    if init.rank != rank:
        raise ValueError(f"initial model rank {init.rank} != {rank}")


def cp_arls_lev(
    t: SparseTensor,
    cfg: SolverConfig,
    init: KruskalModel,
    rng: Optional[np.random.Generator] = None,
    callback: Optional[Callable] = None,
    fit_estimator: Optional[FitEstimator] = None,
):
    """CP decomposition by alternating sketched least squares.

    Every inner solve samples ``cfg.samples`` rows of the Khatri-Rao product
    by leverage-score bounds (hybrid when ``cfg.tau < 1``), solves the
    sampled system, and renormalizes.  The fit is checked once per epoch of
    ``cfg.epoch_size`` outer iterations; the run stops after
    ``cfg.fail_epochs`` consecutive epochs without beating the best fit so
    far by ``cfg.tol``, or after ``cfg.max_epochs``.

    ``callback(epoch, mode, factors, weights, probs)`` is invoked after each
    inner solve if given.

    Returns
    -------
    (model, traces)
    """
    _check_init(t, init, cfg.rank)
    if t.mode_lin is None:
        t = precompute_mode_linearization(t)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    m = t.ndim
    factors = [normalize_columns(A)[0] for A in init.factors]
    weights = init.weights.copy()
    probs = [mode_probabilities(A) for A in factors]

    if cfg.fit_mode == "estimated":
        est = fit_estimator or build_fit_estimator(t, cfg.fit_samples, cfg.fit_alpha, rng)
        fit_fn = lambda mdl: estimated_fit(est, mdl)  # noqa: E731
    else:
        fit_fn = lambda mdl: exact_fit(t, mdl)  # noqa: E731

    traces: List[TraceRecord] = []
    start = time.perf_counter()
    best = -math.inf
    fails = 0
    for epoch in range(1, cfg.max_epochs + 1):
        sbar_sum = np.zeros(m)
        sdet = [0] * m
        pdet = [0.0] * m
        for _ in range(cfg.epoch_size):
            for k in range(m):
                rest = other_modes(m, k)
                dist = ModeDistribution([probs[j] for j in rest])
                plan = skrp_lev(dist, cfg.samples, cfg.tau, rng)
                Zs = krp_samp([factors[j] for j in rest], plan.idx, plan.wgt)
                lin = fiber_linear_index(plan.idx, t.shape, k)
                Xs = tnsr_samp(t, k, lin, plan.wgt)
                B = solve_lsq(Zs, Xs)
                if not np.all(np.isfinite(B)):
                    raise NumericalError(f"non-finite factor entries in mode {k + 1}, epoch {epoch}")
                factors[k], weights = normalize_columns(B)
                probs[k] = mode_probabilities(factors[k])
                sbar_sum[k] += plan.s_bar
                sdet[k] = plan.s_det
                pdet[k] = plan.p_det
                if callback is not None:
                    callback(epoch, k, factors, weights, probs)
        fit = fit_fn(KruskalModel(weights, factors))
        traces.append(
            TraceRecord(
                epoch=epoch,
                time_s=time.perf_counter() - start,
                fit=fit,
                fit_kind=cfg.fit_mode,
                s_bar=list(sbar_sum / cfg.epoch_size),
                s_det=sdet,
                p_det=pdet,
            )
        )
        if fit > best + cfg.tol:
            best = fit
            fails = 0
        else:
            fails += 1
            if fails >= cfg.fail_epochs:
                break
    return KruskalModel(weights, [A.copy() for A in factors]), traces


def _solve_normal(V: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Solve ``B V = M`` for symmetric positive (semi)definite ``V``."""
    try:
        c = la.cho_factor(V, lower=False, check_finite=True)
        return la.cho_solve(c, M.T).T
    except la.LinAlgError:
        warnings.warn("Gram matrix is singular; using pseudo-inverse", RankDeficiencyWarning, stacklevel=3)
        return M @ la.pinvh(V)


def cp_als(
    t: SparseTensor,
    rank: int,
    init: KruskalModel,
    tol: float = 1e-4,
    max_iters: int = 250,
    callback: Optional[Callable] = None,
):
    """Deterministic CP-ALS with exact fit after every outer iteration.

    Stops when the fit changes by less than ``tol``.
    """
    _check_init(t, init, rank)
    m = t.ndim
    factors = [normalize_columns(A)[0] for A in init.factors]
    weights = init.weights.copy()
    traces: List[TraceRecord] = []
    start = time.perf_counter()
    fit_old = 0.0
    for it in range(1, max_iters + 1):
        for k in range(m):
            M = mttkrp(t, factors, k)
            V = gram_hadamard(factors, skip=k)
            B = _solve_normal(V, M)
            if not np.all(np.isfinite(B)):
                raise NumericalError(f"non-finite factor entries in mode {k + 1}, iteration {it}")
            factors[k], weights = normalize_columns(B)
            if callback is not None:
                callback(it, k, factors, weights, M, V)
        fit = exact_fit(t, KruskalModel(weights, factors))
        traces.append(TraceRecord(epoch=it, time_s=time.perf_counter() - start, fit=fit, fit_kind="exact"))
        if it > 1 and abs(fit - fit_old) < tol:
            break
        fit_old = fit
    return KruskalModel(weights, [A.copy() for A in factors]), traces


# --- single least-squares subproblem -----------------------------------------


def lsq_residual_sq(
    t: SparseTensor,
    factors: Sequence[np.ndarray],
    mode: int,
    B: np.ndarray,
    mttkrp_result: Optional[np.ndarray] = None,
) -> float:
    """``||Z B' - X_(mode)'||_F^2`` for ``Z`` the KRP of the other factors.

    Expanded as ``||X||^2 - 2 <B, X_(mode) Z> + <B'B, Z'Z>`` so neither
    ``Z`` nor the unfolding is formed.  ``factors[mode]`` is ignored.
    """
    M = mttkrp(t, factors, mode) if mttkrp_result is None else mttkrp_result
    V = gram_hadamard(factors, skip=mode)
    val = float(t.vals @ t.vals) - 2.0 * float(np.sum(B * M)) + float(np.sum((B.T @ B) * V))
    return max(val, 0.0)


def exact_lsq_solution(t: SparseTensor, factors: Sequence[np.ndarray], mode: int) -> np.ndarray:
    """Unsketched least-squares solution for one mode."""
    M = mttkrp(t, factors, mode)
    V = gram_hadamard(factors, skip=mode)
    return _solve_normal(V, M)


def residual_rel_diff(
    t: SparseTensor,
    factors: Sequence[np.ndarray],
    mode: int,
    B_sketch: np.ndarray,
    B_exact: np.ndarray,
    mttkrp_result: Optional[np.ndarray] = None,
) -> float:
    """``|res(B_sketch) - res(B_exact)| / max(1, res(B_exact))`` with squared residuals."""
    M = mttkrp(t, factors, mode) if mttkrp_result is None else mttkrp_result
    r_s = lsq_residual_sq(t, factors, mode, B_sketch, M)
    r_e = lsq_residual_sq(t, factors, mode, B_exact, M)
    return abs(r_s - r_e) / max(1.0, r_e)
