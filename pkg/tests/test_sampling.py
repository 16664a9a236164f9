import itertools

import numpy as np
import pytest

from cparls import ModeDistribution, cidx, didx, draw_multi_index, sidx, skrp_lev
from cparls.sampling import format_plan


def running_dist():
    return ModeDistribution([np.array([0.6, 0.4]), np.array([0.7, 0.3])])


def brute_force(dist, tau):
    out = {}
    for multi in itertools.product(*(range(n) for n in dist.sizes)):
        p = float(np.prod([dist.probs[k][i] for k, i in enumerate(multi)]))
        if p > tau:
            out[multi] = p
    return out


def sketch_matrix(plan, N, sizes):
    """Explicit sampling matrix with one weighted unit row per plan row."""
    Om = np.zeros((plan.s_bar, N))
    Om[np.arange(plan.s_bar), plan.linear_indices(sizes)] = plan.wgt
    return Om


# --- distributions ----------------------------------------------------------


def test_distribution_validation():
    with pytest.raises(ValueError):
        ModeDistribution([np.array([0.5, 0.4])])
    with pytest.raises(ValueError):
        ModeDistribution([np.array([1.5, -0.5])])


def test_point_mass_draw():
    dist = ModeDistribution([np.array([0.0, 1.0, 0.0]), np.array([1.0]), np.array([0.0, 0.0, 1.0])])
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert draw_multi_index(dist, rng) == (1, 0, 2)


def test_draw_frequencies():
    rng = np.random.default_rng(1)
    n = 10**5
    draws = running_dist().draw(n, rng)
    freq = np.mean((draws[:, 0] == 0) & (draws[:, 1] == 0))
    assert abs(freq - 0.42) < 3 * np.sqrt(0.42 * 0.58 / n)
    uni = ModeDistribution([np.full(2, 0.5), np.full(2, 0.5)]).draw(n, rng)
    counts = np.bincount(uni[:, 0] + 2 * uni[:, 1], minlength=4) / n
    assert np.all(np.abs(counts - 0.25) < 3 * np.sqrt(0.25 * 0.75 / n))


# --- deterministic indices --------------------------------------------------


def test_didx_tau_one_is_empty():
    det = didx(running_dist(), 1.0)
    assert det.count == 0 and det.p_det == 0.0


def test_didx_running_example():
    det = didx(running_dist(), 0.25)
    assert det.count == 2
    assert [tuple(r) for r in det.idx] == [(0, 0), (1, 0)]
    assert abs(det.p_det - 0.70) < 1e-12


def test_didx_brute_force_small():
    rng = np.random.default_rng(2)
    for _ in range(20):
        dist = ModeDistribution([rng.dirichlet(np.full(n, 0.3)) for n in rng.integers(1, 12, 3)])
        tau = float(rng.uniform(1e-3, 0.2))
        expect = brute_force(dist, tau)
        det = didx(dist, tau)
        assert {tuple(int(v) for v in r) for r in det.idx} == set(expect)
        np.testing.assert_allclose(det.p_det, sum(expect.values()), atol=1e-12)
        assert np.all(np.diff(det.probs) <= 0)


def test_didx_cap():
    dist = ModeDistribution([np.full(100, 0.01)] * 3)
    with pytest.raises(ValueError, match="cap"):
        didx(dist, 1e-7, cap=1000)


# --- random indices ---------------------------------------------------------


def test_sidx_uniform_weights():
    dist = ModeDistribution([np.full(4, 0.25)])
    idx, wgt, probs = sidx(dist, 2, 1.0, 0.0, np.random.default_rng(3))
    assert idx.shape == (2, 1)
    np.testing.assert_allclose(wgt, np.sqrt(2.0), rtol=1e-15)


def test_sidx_conditional_distribution():
    dist = running_dist()
    det = didx(dist, 0.25)
    n = 10**5
    idx, wgt, probs = sidx(dist, n, 0.25, det.p_det, np.random.default_rng(4))
    assert not np.any(idx[:, 1] == 0)
    freq = np.mean(idx[:, 0] == 0)
    p = 0.18 / 0.30
    assert abs(freq - p) < 3 * np.sqrt(p * (1 - p) / n)
    np.testing.assert_allclose(wgt, np.sqrt(0.30 / (probs * n)), rtol=1e-14)


def test_sidx_direct_when_acceptance_tiny():
    # a cap of 4 draws per round forces exact sampling of the restricted distribution
    dist = running_dist()
    det = didx(dist, 0.25)
    n = 10**5
    idx, wgt, probs = sidx(dist, n, 0.25, det.p_det, np.random.default_rng(4), max_draws=4)
    assert idx.shape == (n, 2) and not np.any(idx[:, 1] == 0)
    p = 0.18 / 0.30
    freq = np.mean(idx[:, 0] == 0)
    assert abs(freq - p) < 3 * np.sqrt(p * (1 - p) / n)
    np.testing.assert_allclose(probs, dist.prob(idx), rtol=1e-15)
    np.testing.assert_allclose(wgt, np.sqrt(0.30 / (probs * n)), rtol=1e-14)


def test_sidx_direct_matches_restricted_distribution():
    rng = np.random.default_rng(16)
    dist = ModeDistribution([rng.dirichlet(np.full(n, 0.3)) for n in (5, 4, 3)])
    tau = 0.02
    expect = {m: p for m, p in np.ndenumerate(np.einsum("i,j,k->ijk", *dist.probs)) if p <= tau}
    total = sum(expect.values())
    n = 2 * 10**5
    idx, _, _ = sidx(dist, n, tau, 1 - total, rng, max_draws=60)
    got = {}
    for row in map(tuple, idx.tolist()):
        got[row] = got.get(row, 0) + 1
    assert set(got) <= set(expect)
    tv = 0.5 * sum(abs(got.get(m, 0) / n - p / total) for m, p in expect.items())
    assert tv < 0.02


def test_sidx_floor():
    with pytest.raises(ValueError, match="floor"):
        sidx(running_dist(), 4, 0.01, 1.0 - 1e-9, np.random.default_rng(0))


# --- combining --------------------------------------------------------------


def test_cidx_identity_on_distinct():
    idx = np.array([[2, 0], [0, 1], [1, 1]])
    wgt = np.array([0.5, 1.5, 2.0])
    u, w, c = cidx(idx, wgt)
    np.testing.assert_array_equal(u, idx)
    np.testing.assert_array_equal(w, wgt)
    np.testing.assert_array_equal(c, 1)


def test_cidx_hand_example():
    w0 = np.sqrt(1.0 / (4 * 0.5))
    idx = np.array([[1], [0], [1], [1]])
    wgt = np.array([w0, np.sqrt(1.0 / (4 * 0.25)), w0, w0])
    u, w, c = cidx(idx, wgt)
    np.testing.assert_array_equal(u, [[1], [0]])
    np.testing.assert_array_equal(c, [3, 1])
    np.testing.assert_allclose(w[0], np.sqrt(1.5), rtol=1e-15)


def test_cidx_norm_identity():
    rng = np.random.default_rng(5)
    sizes = (6, 5)
    N = 30
    dist = ModeDistribution([rng.dirichlet(np.ones(n)) for n in sizes])
    plain = skrp_lev(dist, 40, 1.0, np.random.default_rng(6), combine=False)
    merged = skrp_lev(dist, 40, 1.0, np.random.default_rng(6), combine=True)
    assert merged.s_bar < plain.s_bar
    A, B = sketch_matrix(plain, N, sizes), sketch_matrix(merged, N, sizes)
    for _ in range(100):
        x = rng.standard_normal(N)
        np.testing.assert_allclose(np.linalg.norm(B @ x), np.linalg.norm(A @ x), rtol=1e-12)


# --- full plans -------------------------------------------------------------


def test_plan_tau_one_is_random_only():
    plan = skrp_lev(running_dist(), 8, 1.0, np.random.default_rng(7))
    assert plan.s_det == 0 and plan.p_det == 0.0
    assert plan.s_bar <= 4


def test_plan_point_mass_degenerate():
    dist = ModeDistribution([np.array([1.0]), np.array([0.0, 1.0])])
    plan = skrp_lev(dist, 16, 1 / 16, np.random.default_rng(8))
    assert plan.s_det == 1 and plan.s_bar == 1
    np.testing.assert_array_equal(plan.idx, [[0, 1]])
    np.testing.assert_array_equal(plan.wgt, [1.0])


def test_plan_det_overflow_keeps_most_probable():
    dist = ModeDistribution([np.full(4, 0.25), np.array([0.5, 0.3, 0.2])])
    plan = skrp_lev(dist, 3, 0.01, np.random.default_rng(9))
    assert plan.s_det == 3 and plan.s_bar == 3
    np.testing.assert_allclose(plan.probs, 0.125)


def test_plan_running_example():
    plan = skrp_lev(running_dist(), 8, 0.25, np.random.default_rng(10))
    assert plan.s_det == 2 and plan.s_rnd == 6
    assert [tuple(r) for r in plan.idx[:2]] == [(0, 0), (1, 0)]
    np.testing.assert_array_equal(plan.wgt[:2], 1.0)
    rnd = {tuple(int(v) for v in r) for r in plan.idx[2:]}
    assert rnd <= {(0, 1), (1, 1)}
    assert plan.s_bar - 2 == len(rnd) <= 6
    c = plan.counts[2:]
    assert c.sum() == 6
    np.testing.assert_allclose(plan.wgt[2:], np.sqrt(c / 6 * 0.30 / plan.probs[2:]), rtol=1e-14)


def test_plan_weight_consistency():
    rng = np.random.default_rng(11)
    for s in (16, 64, 256):
        dist = ModeDistribution([rng.dirichlet(np.full(n, 0.2)) for n in (10, 12, 8)])
        plan = skrp_lev(dist, s, 1 / s, rng)
        np.testing.assert_array_equal(plan.wgt[: plan.s_det], 1.0)
        np.testing.assert_allclose(plan.probs, dist.prob(plan.idx), rtol=1e-15)
        sl = slice(plan.s_det, None)
        ratio = plan.wgt[sl] ** 2 * plan.s_rnd * plan.probs[sl] / ((1 - plan.p_det) * plan.counts[sl])
        np.testing.assert_allclose(ratio, 1.0, atol=1e-12)
        rows = {tuple(r) for r in plan.idx[sl]}
        assert len(rows) == plan.s_bar - plan.s_det
        assert np.all(plan.probs[sl] <= 1 / s)
        assert plan.s_bar <= s


def test_plan_seeded_determinism():
    dist = ModeDistribution([np.random.default_rng(12).dirichlet(np.ones(n)) for n in (7, 9)])
    a = skrp_lev(dist, 32, 1 / 32, np.random.default_rng(13))
    b = skrp_lev(dist, 32, 1 / 32, np.random.default_rng(13))
    assert format_plan(a) == format_plan(b)


def test_hybrid_equals_random_when_nothing_exceeds_tau():
    dist = ModeDistribution([np.full(10, 0.1), np.full(10, 0.1)])
    a = skrp_lev(dist, 20, 1 / 20, np.random.default_rng(14))
    b = skrp_lev(dist, 20, 1.0, np.random.default_rng(14))
    assert a.s_det == 0
    np.testing.assert_array_equal(a.idx, b.idx)
    np.testing.assert_array_equal(a.wgt, b.wgt)


def test_hybrid_unbiased():
    rng = np.random.default_rng(15)
    sizes = (8, 8)
    A = [rng.standard_normal((n, 2)) for n in sizes]
    A[0][0] *= 6.0
    dist = ModeDistribution.from_factors(A)
    x = rng.standard_normal(64)
    vals = []
    for _ in range(4000):
        plan = skrp_lev(dist, 16, 1 / 16, rng)
        vals.append(np.sum((plan.wgt * x[plan.linear_indices(sizes)]) ** 2))
    vals = np.array(vals)
    assert plan.s_det > 0
    se = vals.std(ddof=1) / np.sqrt(vals.size)
    assert abs(vals.mean() - x @ x) < 3 * se


def test_format_plan():
    plan = skrp_lev(running_dist(), 8, 0.25, np.random.default_rng(10))
    lines = format_plan(plan).splitlines()
    assert len(lines) == plan.s_bar
    assert lines[0] == "1 1 1.0 det 1"
    assert lines[2].split()[3] == "rnd"
