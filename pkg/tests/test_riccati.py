import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from mixedpo.cases import get_case
from mixedpo.errors import InfeasibleError, InstabilityError, NonConvergenceError
from mixedpo.plant import Plant
from mixedpo.polgrad import find_feasible_init, run_optimizer, OptimizerConfig
from mixedpo.riccati import (
    iterate_dare_policy,
    solve_care_policy,
    solve_dare_policy,
    solve_optimal_care,
    solve_optimal_modified_riccati,
    tilde_p,
)
from oracles import lqr_value_iteration, scalar_policy_riccati

NC = dict(a=2.75, b=2.0, q=1.0, r=1.0, d2=0.01, gamma=0.2101)


def _scalar_plant(a, b, q, r, d2, gamma):
    return Plant([[a]], [[b]], [[q]], [[r]], [[np.sqrt(d2)]], gamma)


def nocoercivity_boundary():
    """Gain where the scalar policy Riccati equation gets a double root."""
    a, b, q, r, d2, g = (NC[k] for k in ("a", "b", "q", "r", "d2", "gamma"))

    def disc(k):
        acl, w = a - b * k, q + r * k * k
        return (g * g * (1 - acl * acl) + d2 * w) ** 2 - 4 * d2 * g * g * w

    return brentq(disc, 1.2, 1.3, xtol=1e-15)


def test_tilde_p_examples():
    np.testing.assert_array_equal(tilde_p(np.zeros((2, 2)), np.eye(2), 1.0), np.zeros((2, 2)))
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(tilde_p(P, np.eye(2), 1e8), P, rtol=1e-6)
    p, d2, g = 3.3752, 0.01, 0.2101
    expected = p + p * p * d2 / (g * g - d2 * p)
    assert tilde_p([[p]], [[np.sqrt(d2)]], g)[0, 0] == pytest.approx(expected, rel=1e-12)


def test_tilde_p_infeasible():
    with pytest.raises(InfeasibleError):
        tilde_p(np.eye(2) * 10, np.eye(2), 1.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4), k=st.integers(1, 3))
def test_tilde_p_inversion_lemma(seed, n, k):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n))
    P = M @ M.T
    D = rng.standard_normal((n, k))
    gamma = np.sqrt(np.linalg.eigvalsh(D.T @ P @ D)[-1] * rng.uniform(1.1, 5.0) + 1e-3)
    lhs = tilde_p(P, D, gamma)
    rhs = np.linalg.solve(np.eye(n) - P @ D @ D.T / gamma**2, P)
    assert np.abs(lhs - rhs).max() <= 1e-10 * max(1.0, np.abs(rhs).max())


def test_dare_zero_output_gives_zero():
    p = Plant(np.diag([0.5, -0.3]), np.ones((2, 1)), np.zeros((2, 2)), np.eye(1), np.eye(2), 1.0)
    cert = solve_dare_policy(p, np.zeros((1, 2)))
    np.testing.assert_allclose(cert.P, 0.0, atol=1e-14)
    assert cert.feasible


def test_dare_unstable_gain_raises():
    p = _scalar_plant(**NC)
    with pytest.raises(InstabilityError):
        solve_dare_policy(p, [[0.0]])


def test_dare_infeasible_gain_raises_with_margin():
    c = get_case("nonconvex_discrete")
    for method in ("newton", "recursion"):
        with pytest.raises(InfeasibleError) as info:
            solve_dare_policy(c.plant(), c.gains["K3"], method=method)
        assert info.value.margin is not None


def test_dare_budget_exhaustion():
    c = get_case("nonconvex_discrete")
    with pytest.raises(NonConvergenceError):
        solve_dare_policy(c.plant(), c.gains["K1"], method="recursion", max_iter=1, tol=1e-300)


def test_nocoercivity_boundary_values():
    kb = nocoercivity_boundary()
    assert abs(kb - 1.2573) <= 1e-3
    p = _scalar_plant(**NC)
    for method in ("recursion", "newton"):
        cert = solve_dare_policy(p, [[kb + 1e-8]], method=method)
        P = cert.P[0, 0]
        assert cert.feasible
        assert P == pytest.approx(3.3752, abs=1e-3)
        assert 1 - NC["d2"] * P / NC["gamma"] ** 2 == pytest.approx(0.2354, abs=1e-3)
        assert cert.closedloop_radius == pytest.approx(0.9998, abs=1e-3)


def test_dare_residual_random_instance(rng):
    for _ in range(5):
        A = rng.standard_normal((3, 3)) * 0.3
        p = Plant(A, rng.standard_normal((3, 2)), np.eye(3), np.eye(2), 0.3 * np.eye(3), 2.0)
        K0, p = find_feasible_init(p, 0.3, seed=rng, gamma_slack=0.2)
        cert = solve_dare_policy(p, K0)
        assert cert.feasible and cert.residual <= 1e-9


def test_dare_recursion_monotone_and_start_independent():
    c = get_case("nonconvex_discrete")
    p, K = c.plant(), c.gains["K2"]
    cert = solve_dare_policy(p, K, method="recursion", keep_history=True, tol=1e-13)
    H = cert.history
    for a, b in zip(H, H[1:]):
        assert np.linalg.eigvalsh(b - a)[0] >= -1e-10
    for P0 in (0.5 * p.Q, p.Q):
        other = solve_dare_policy(p, K, method="recursion", P0=P0, tol=1e-13)
        np.testing.assert_allclose(other.P, cert.P, atol=1e-8)
    newton = solve_dare_policy(p, K, method="newton")
    np.testing.assert_allclose(newton.P, cert.P, atol=1e-9)


def test_iterate_dare_policy_generator():
    c = get_case("nonconvex_discrete")
    p, K = c.plant(), c.gains["K1"]
    Rv = np.eye(3)
    it = iterate_dare_policy(p.closed_loop(K), p.weight(K), p.D, Rv)
    first = next(it)
    np.testing.assert_allclose(first, p.weight(K))


@settings(max_examples=40, deadline=None)
@given(
    a=st.floats(-0.95, 0.95), b=st.floats(0.1, 2.0), q=st.floats(0.1, 3.0),
    r=st.floats(0.1, 3.0), d2=st.floats(0.01, 1.0), k=st.floats(-0.3, 0.3),
)
def test_scalar_closed_form(a, b, q, r, d2, k):
    if abs(a - b * k) >= 0.95:
        return
    gamma = 1.0
    p = _scalar_plant(a, b, q, r, d2, gamma)
    try:
        P_ref = scalar_policy_riccati(a, b, q, r, d2, gamma, k)
    except ValueError:
        return
    try:
        cert = solve_dare_policy(p, [[k]])
    except InfeasibleError:
        return
    if cert.feasible:
        assert cert.P[0, 0] == pytest.approx(P_ref, abs=1e-9 * max(1.0, P_ref))


def test_care_trivial_examples():
    p = Plant(-np.eye(2), np.ones((2, 1)), np.zeros((2, 2)), np.eye(1), np.eye(2), 1.0)
    np.testing.assert_allclose(solve_care_policy(p, np.zeros((1, 2))).P, 0.0, atol=1e-14)
    p = Plant([[-1.0]], [[0.0]], [[1.0]], [[1.0]], [[0.0]], 3.0)
    assert solve_care_policy(p, [[0.0]]).P[0, 0] == pytest.approx(0.5)


def test_care_errors():
    p = Plant([[1.0]], [[1.0]], [[1.0]], [[1.0]], [[1.0]], 1.0)
    with pytest.raises(InstabilityError):
        solve_care_policy(p, [[0.0]])
    c = get_case("nonconvex_continuous")
    with pytest.raises(InfeasibleError):
        solve_care_policy(c.plant(0.5), c.gains["K3"])


def test_care_residual_at_case3_optimum():
    c = get_case("case3")
    p = c.plant()
    K0, _ = find_feasible_init(p, c.init_box, "continuous", seed=0)
    trace = run_optimizer(p, K0, OptimizerConfig(kind="GN"), "continuous")
    cert = solve_care_policy(p, trace.final.K)
    assert cert.feasible and cert.residual <= 1e-9


def test_optimal_case2_structure():
    P, K = solve_optimal_modified_riccati(get_case("case2").plant())
    off = K.copy()
    off[0, 0] = 0.0
    assert np.abs(off).max() <= 1e-6
    assert K[0, 0] > 0


def test_optimal_lqr_limit(rng):
    A = rng.standard_normal((3, 3)) * 0.6
    B = rng.standard_normal((3, 2))
    p = Plant(A, B, np.eye(3), np.eye(2), np.eye(3), 1e8)
    _, K = solve_optimal_modified_riccati(p)
    _, K_ref = lqr_value_iteration(A, B, np.eye(3), np.eye(2))
    np.testing.assert_allclose(K, K_ref, atol=1e-6)


def test_optimal_no_control_authority():
    p = Plant(np.diag([0.5, 0.2]), np.zeros((2, 1)), np.eye(2), np.eye(1), 0.1 * np.eye(2), 5.0)
    _, K = solve_optimal_modified_riccati(p)
    np.testing.assert_array_equal(K, np.zeros((1, 2)))


def test_optimal_infeasible_level():
    c = get_case("case2")
    with pytest.raises(InfeasibleError) as info:
        solve_optimal_modified_riccati(c.plant(0.5))
    assert info.value.margin is None or info.value.margin > 0


def test_optimal_care_matches_newton_fixed_point():
    c = get_case("case3")
    p = c.plant()
    P, K = solve_optimal_care(p)
    np.testing.assert_allclose(solve_care_policy(p, K).P, P, atol=1e-8)
    np.testing.assert_allclose(K, np.linalg.solve(p.R, p.B.T @ P), atol=1e-12)
    with pytest.raises(InfeasibleError):
        solve_optimal_care(p.with_gamma(0.3))
