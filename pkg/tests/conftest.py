import numpy as np

from cparls import SparseTensor, precompute_mode_linearization


def random_sparse(shape, nnz, rng, with_lin=True):
    """Random tensor with ``nnz`` distinct nonzero positions."""
    total = int(np.prod(shape))
    lin = rng.choice(total, size=min(nnz, total), replace=False)
    subs = np.stack(np.unravel_index(lin, shape, order="F"), axis=1)
    vals = rng.standard_normal(subs.shape[0])
    vals[vals == 0] = 1.0
    t = SparseTensor(subs, vals, shape)
    return precompute_mode_linearization(t) if with_lin else t


def unfold(X, mode):
    """Mode-``mode`` unfolding with remaining modes in column-major order."""
    return np.reshape(np.moveaxis(X, mode, 0), (X.shape[mode], -1), order="F")


def concentrated_instance():
    """Sparse 4-way tensor with heavy leverage rows, about 2.5e5 nonzeros.

    Solving for mode 0 gives a KRP with N = 40 * 50 * 50 = 1e5 rows.
    Returns the tensor, unit-column factors, and the exact mode-0 solution.
    """
    from cparls.kernels import normalize_columns
    from cparls.solver import exact_lsq_solution

    rng = np.random.default_rng(7)
    shape, r = (50, 40, 50, 50), 5
    factors = []
    for n in shape:
        A = rng.standard_normal((n, r))
        A[:, :3] = 0.0
        for c in range(3):
            A[c, c] = 3.0 + rng.uniform(0.0, 0.05)
        factors.append(A)
    M = np.einsum("ir,jr,kr,lr->ijkl", *factors)
    keep = np.abs(M) > np.quantile(np.abs(M), 0.95)
    subs = np.argwhere(keep)
    vals = M[keep] + 0.3 * M.std() * rng.standard_normal(subs.shape[0])
    t = precompute_mode_linearization(SparseTensor(subs, vals, shape))
    units = [normalize_columns(A)[0] for A in factors]
    return t, units, exact_lsq_solution(t, units, 0)


def heavy_fiber_instance(seed=0, n=2000, active=30, rank=8, background=20000):
    """Mostly empty cube whose mass sits in a dense low-rank block.

    Block fibers carry nearly all of the norm; a thin layer of small
    background nonzeros touches most slices.
    """
    rng = np.random.default_rng(seed)
    rows = [rng.choice(n, active, replace=False) for _ in range(3)]
    facs = [rng.gamma(1.0, 1.0, (active, rank)) for _ in range(3)]
    B = np.einsum("ir,jr,kr->ijk", *facs)
    B += 0.05 * B.std() * rng.standard_normal(B.shape)
    loc = np.argwhere(B != 0)
    subs = np.stack([rows[m][loc[:, m]] for m in range(3)], axis=1)
    vals = B[tuple(loc.T)]
    bsubs = rng.integers(0, n, (background, 3))
    bvals = 0.1 * rng.random(background) + 0.01
    allsubs = np.concatenate([subs, bsubs])
    allvals = np.concatenate([vals, bvals])
    u, first = np.unique(allsubs, axis=0, return_index=True)
    return precompute_mode_linearization(SparseTensor(u, allvals[first], (n, n, n)))
