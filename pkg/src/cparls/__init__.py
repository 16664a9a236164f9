"""Sparse CP decomposition by alternating least squares with leverage-score sketching."""

__version__ = "0.1.0"

from .exceptions import FrosttFormatError, NumericalError, RankDeficiencyWarning
from .kernels import gram_hadamard, krp, krp_samp, leverage_scores, mttkrp, normalize_columns, solve_lsq
from .kruskal import KruskalModel, read_model, write_model
from .sampling import ModeDistribution, SketchPlan, cidx, didx, draw_multi_index, sidx, skrp_lev
from .solver import (
    FitEstimator,
    SolverConfig,
    TraceRecord,
    build_fit_estimator,
    cp_als,
    cp_arls_lev,
    estimated_fit,
    exact_fit,
    gaussian_init,
    initial_model,
    residual_rel_diff,
    rrf_init,
)
from .sparse_tensor import (
    SparseTensor,
    frob_norm,
    from_linear,
    parse_frostt,
    precompute_mode_linearization,
    read_frostt,
    tnsr_samp,
    to_linear,
    write_frostt,
)
from .synth import SynthSpec, factor_match_score, gen_synthetic

__all__ = [
    "FitEstimator",
    "FrosttFormatError",
    "KruskalModel",
    "ModeDistribution",
    "NumericalError",
    "RankDeficiencyWarning",
    "SketchPlan",
    "SolverConfig",
    "SparseTensor",
    "SynthSpec",
    "TraceRecord",
    "build_fit_estimator",
    "cidx",
    "cp_als",
    "cp_arls_lev",
    "didx",
    "draw_multi_index",
    "estimated_fit",
    "exact_fit",
    "factor_match_score",
    "frob_norm",
    "from_linear",
    "gaussian_init",
    "gen_synthetic",
    "gram_hadamard",
    "initial_model",
    "krp",
    "krp_samp",
    "leverage_scores",
    "mttkrp",
    "normalize_columns",
    "parse_frostt",
    "precompute_mode_linearization",
    "read_frostt",
    "read_model",
    "residual_rel_diff",
    "rrf_init",
    "sidx",
    "skrp_lev",
    "solve_lsq",
    "tnsr_samp",
    "to_linear",
    "write_frostt",
    "write_model",
]
