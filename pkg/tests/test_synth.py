import numpy as np
import pytest

from cparls import KruskalModel, SynthSpec, cp_als, factor_match_score, gaussian_init, gen_synthetic, leverage_scores
from cparls.synth import concentrated_rows


def test_concentrated_rows_layout():
    spec = SynthSpec(rank=10, seed=0)
    _, truth = gen_synthetic(spec)
    rows = concentrated_rows(spec)
    assert rows.size == 15
    for A in truth.factors:
        block = A[:, :3]
        support = np.flatnonzero(np.any(block != 0, axis=1))
        np.testing.assert_array_equal(support, rows)
        # each seeded row carries exactly one of the concentrated columns
        np.testing.assert_array_equal(np.count_nonzero(block[rows], axis=1), 1)


def test_seeded_values_range():
    spec = SynthSpec(shape=(20, 20, 20), rank=4, seed=1, noise=0.0)
    _, truth = gen_synthetic(spec)
    # replay the generator's draws for the first factor
    rng = np.random.default_rng(1)
    rng.standard_normal((20, 4))
    vals = 3.0 + rng.uniform(0.0, 0.05, 5)
    A = truth.factors[0]
    np.testing.assert_allclose(A[:5, 0] / np.linalg.norm(A[:5, 0]), vals / np.linalg.norm(vals), rtol=1e-12)


def test_leverage_concentration():
    spec = SynthSpec(rank=10, seed=2)
    _, truth = gen_synthetic(spec)
    rows = concentrated_rows(spec)
    for A in truth.factors:
        ell = leverage_scores(A)
        assert ell[rows].sum() >= 2.5
        assert ell[rows].mean() > 1.5 * np.delete(ell, rows).mean()


def test_zero_noise_rank_one_exact():
    spec = SynthSpec(shape=(8, 9, 10), rank=1, n_concentrated=1, spread=3, noise=0.0, seed=3)
    t, truth = gen_synthetic(spec)
    assert t.nnz == 3 * 3 * 3
    np.testing.assert_allclose(t.full(), truth.full(), atol=1e-12)
    rng = np.random.default_rng(0)
    _, traces = cp_als(t, 1, gaussian_init(t.shape, 1, rng), tol=1e-12, max_iters=50)
    assert traces[-1].fit == pytest.approx(1.0, abs=1e-8)


def test_noise_level():
    spec = SynthSpec(shape=(20, 20, 20), rank=3, noise=0.1, seed=4)
    t, truth = gen_synthetic(spec)
    X = truth.full()
    rel = np.linalg.norm(t.full() - X) / np.linalg.norm(X)
    assert rel == pytest.approx(0.1, rel=1e-10)


def test_reproducible():
    spec = SynthSpec(shape=(10, 10, 10), rank=3, spread=3, seed=5)
    a, ta = gen_synthetic(spec)
    b, tb = gen_synthetic(spec)
    np.testing.assert_array_equal(a.subs, b.subs)
    np.testing.assert_array_equal(a.vals, b.vals)
    np.testing.assert_array_equal(ta.weights, tb.weights)


@pytest.mark.parametrize(
    "kw",
    [dict(rank=0), dict(n_concentrated=4, rank=3), dict(spread=20, shape=(50, 50, 10)), dict(magnitude=0.0)],
)
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        SynthSpec(**kw)


def test_fms_self_and_permutation():
    rng = np.random.default_rng(6)
    m = KruskalModel(rng.random(4) + 0.5, [rng.standard_normal((n, 4)) for n in (7, 8, 9)])
    assert factor_match_score(m, m) == pytest.approx(1.0, abs=1e-12)
    perm = rng.permutation(4)
    signs = [np.where(rng.random(4) < 0.5, -1.0, 1.0) for _ in range(3)]
    signs[2] = signs[0] * signs[1]  # keep each rank-one term unchanged
    other = KruskalModel(m.weights[perm], [A[:, perm] * s[perm] for A, s in zip(m.factors, signs)])
    np.testing.assert_allclose(other.full(), m.full(), atol=1e-12)
    assert factor_match_score(m, other) == pytest.approx(1.0, abs=1e-12)


def test_fms_hand_value():
    a = KruskalModel(np.array([2.0]), [np.array([[1.0], [0.0]]), np.array([[1.0], [0.0]])])
    b = KruskalModel(np.array([1.0]), [np.array([[1.0], [1.0]]), np.array([[1.0], [0.0]])])
    # normalized weights 2 and sqrt(2), cosine 1/sqrt(2)
    expect = (1 - (2 - np.sqrt(2)) / 2) / np.sqrt(2)
    assert factor_match_score(a, b) == pytest.approx(expect, rel=1e-12)


def test_fms_random_models_low():
    rng = np.random.default_rng(7)
    for _ in range(5):
        a, b = (KruskalModel(np.ones(10), [rng.standard_normal((50, 10)) for _ in range(3)]) for _ in range(2))
        assert factor_match_score(a, b) < 0.5


def test_fms_mismatch():
    a = KruskalModel(np.ones(2), [np.ones((3, 2))] * 3)
    with pytest.raises(ValueError):
        factor_match_score(a, KruskalModel(np.ones(3), [np.ones((3, 3))] * 3))
    with pytest.raises(ValueError):
        factor_match_score(a, KruskalModel(np.ones(2), [np.ones((4, 2))] * 3))
