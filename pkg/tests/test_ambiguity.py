import numpy as np
import pytest

from canyon_rtk.ambiguity import (adop, conditional_position, decorrelate, integer_search,
                                  resolve, validate_and_fix)
from canyon_rtk.errors import NotPositiveDefinite

from scenes import brute_force_ils, dd_float_problem, random_pd

Q2 = np.array([[0.5, 0.45], [0.45, 0.5]])


def test_decorrelate_diagonal_is_identity():
    Z, Qz = decorrelate(np.diag([0.3, 0.1, 0.2]))
    assert abs(round(abs(np.linalg.det(Z)))) == 1
    np.testing.assert_allclose(Qz, Z.T @ np.diag([0.3, 0.1, 0.2]) @ Z)
    # permutations only: still diagonal
    np.testing.assert_allclose(Qz - np.diag(np.diag(Qz)), 0.0, atol=1e-15)


def test_decorrelate_correlated_pair():
    Z, Qz = decorrelate(Q2)
    assert np.all(Z == np.rint(Z))
    assert abs(np.linalg.det(Z)) == pytest.approx(1.0)
    assert np.linalg.cond(Qz) <= np.linalg.cond(Q2)


def test_decorrelate_preserves_det():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = int(rng.integers(1, 7))
        Q = random_pd(rng, m)
        Z, Qz = decorrelate(Q)
        assert abs(np.linalg.det(Z)) == pytest.approx(1.0)
        assert np.linalg.det(Qz) == pytest.approx(np.linalg.det(Q), rel=1e-8)


def test_not_positive_definite():
    with pytest.raises(NotPositiveDefinite):
        decorrelate(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NotPositiveDefinite):
        adop(-np.eye(2))


def test_search_rounds_tight_problem():
    c, v = integer_search([0.1, -0.3], 0.01 * np.eye(2))
    np.testing.assert_array_equal(c[0], [0, 0])
    assert v[0] == pytest.approx(10.0)


def test_search_integral_input():
    c, v = integer_search([3.0, -2.0, 7.0], random_pd(np.random.default_rng(1), 3))
    np.testing.assert_array_equal(c[0], [3, -2, 7])
    assert v[0] == pytest.approx(0.0, abs=1e-12)
    assert v[1] > 0


def test_search_correlated_pair_matches_enumeration():
    a = np.array([1.2, 2.8])
    c, v = integer_search(a, Q2)
    Qi = np.linalg.inv(Q2)
    box = [np.array([i, j]) for i in range(-4, 7) for j in range(-2, 9)]
    vals = sorted((float((a - z) @ Qi @ (a - z)), tuple(z)) for z in box)
    assert tuple(c[0]) == vals[0][1] and tuple(c[1]) == vals[1][1]
    np.testing.assert_allclose(v, [vals[0][0], vals[1][0]], rtol=1e-10)


@pytest.mark.parametrize("seed", range(4))
def test_search_matches_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    for _ in range(50):
        m = int(rng.integers(1, 7))
        Q = random_pd(rng, m)
        a = rng.normal(scale=10, size=m)
        c, v = integer_search(a, Q)
        cb, vb = brute_force_ils(a, Q)
        np.testing.assert_allclose(v, vb, rtol=1e-9, atol=1e-12)
        np.testing.assert_array_equal(c[0], cb[0])


def test_ratio_acceptance():
    Q = np.eye(2) * 0.01
    Qpn = np.zeros((3, 2))
    fix = validate_and_fix([0, 0], np.zeros(3), Q, Qpn, [[0, 0], [1, 0]], [1.0, 5.0], 3.0)
    assert fix.accepted and fix.ratio == pytest.approx(5.0)
    keep = validate_and_fix([0, 0], np.ones(3), Q, Qpn, [[0, 0], [1, 0]], [1.0, 1.1], 3.0)
    assert not keep.accepted
    np.testing.assert_array_equal(keep.position, np.ones(3))


def test_conditional_fix_zero_correction():
    rng = np.random.default_rng(2)
    Q = random_pd(rng, 3)
    p = rng.normal(size=3)
    a = np.array([1.0, 2.0, -4.0])
    np.testing.assert_allclose(conditional_position(p, a, a, Q, rng.normal(size=(3, 3))), p)


def test_correct_fix_improves_position():
    rng = np.random.default_rng(3)
    better = 0
    n = 400
    for _ in range(n):
        a, p, Qnn, Qpn, a_true = dd_float_problem(rng)
        p_fix = conditional_position(p, a, a_true, Qnn, Qpn)
        better += np.linalg.norm(p_fix) < np.linalg.norm(p)
    assert better / n >= 0.95


def test_resolve_on_tight_problem():
    a, p, Qnn, Qpn, a_true = dd_float_problem(np.random.default_rng(4), sigma_rho=0.05)
    fix = resolve(a, p, Qnn, Qpn)
    assert fix.accepted
    np.testing.assert_array_equal(fix.ambiguities, a_true)
    # single-epoch geometry: vertical DOP inflates the 5 mm carrier noise
    assert np.linalg.norm(fix.position) < 0.05


def test_adop_values():
    assert adop(np.eye(3)) == pytest.approx(1.0)
    assert adop(4 * np.eye(3)) == pytest.approx(2.0)
    assert adop(0.01 * np.eye(2)) == pytest.approx(0.1)


def test_adop_invariant_under_decorrelation():
    rng = np.random.default_rng(5)
    for _ in range(20):
        Q = random_pd(rng, int(rng.integers(1, 7)))
        assert adop(decorrelate(Q)[1]) == pytest.approx(adop(Q), rel=1e-9)


def test_success_rate_falls_with_adop():
    rng = np.random.default_rng(6)
    rows = []
    for sigma_rho in (0.05, 0.15, 0.3, 0.6, 1.2):
        ok = 0
        ads = []
        for _ in range(300):
            a, p, Qnn, Qpn, a_true = dd_float_problem(rng, n_dd=5, sigma_rho=sigma_rho)
            ads.append(adop(Qnn))
            c, _ = integer_search(a, Qnn)
            ok += np.array_equal(c[0], a_true)
        rows.append((np.mean(ads), ok / 300))
    rows.sort()
    rates = [r for _, r in rows]
    assert all(b <= a for a, b in zip(rates, rates[1:]))
    assert rates[0] > 0.9 and rates[-1] < 0.5
