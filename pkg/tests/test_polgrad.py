import numpy as np
import pytest

from mixedpo.cases import get_case
from mixedpo.errors import FeasibilityViolation, InfeasibleError, SearchFailure
from mixedpo.norms import membership
from mixedpo.plant import Plant
from mixedpo.polgrad import (
    COST_FORMS,
    OptimizerConfig,
    cost,
    find_feasible_init,
    gradient_bundle,
    run_optimizer,
    step,
    theorem_stepsize,
)
from mixedpo.riccati import solve_dare_policy, solve_optimal_modified_riccati
from oracles import central_difference

CASE2 = get_case("case2")
CASE3 = get_case("case3")


def _random_feasible(rng, n=3, m=2, slack=0.3):
    A = rng.standard_normal((n, n)) * 0.4
    p = Plant(A, rng.standard_normal((n, m)), np.eye(n), np.eye(m), 0.5 * rng.standard_normal((n, n)), 1.0)
    return find_feasible_init(p, 0.3, seed=rng, gamma_slack=slack)


def test_cost_zero_value_matrix():
    p = Plant(np.diag([0.5, 0.2]), np.ones((2, 1)), np.zeros((2, 2)), np.eye(1), np.eye(2), 1.0)
    for form in COST_FORMS:
        assert cost(p, np.zeros((1, 2)), form) == 0.0


def test_cost_large_gamma_limit(rng):
    K0, p = _random_feasible(rng)
    big = p.with_gamma(1e6)
    assert cost(big, K0, "J2_logdet") == pytest.approx(cost(big, K0, "J1_trace"), rel=1e-4)


def test_logdet_eigenvalue_identity(rng):
    K0, p = _random_feasible(rng)
    P = solve_dare_policy(p, K0).P
    lam = np.linalg.eigvalsh(p.D.T @ P @ p.D)
    g2 = p.gamma**2
    assert cost(p, K0, "J2_logdet") == pytest.approx(-g2 * np.sum(np.log(1 - lam / g2)), rel=1e-10)


def test_cost_rejects_infeasible_and_bad_forms():
    c = get_case("nonconvex_discrete")
    with pytest.raises(InfeasibleError):
        cost(c.plant(), c.gains["K3"])
    with pytest.raises(ValueError):
        cost(c.plant(), c.gains["K1"], "J4")
    with pytest.raises(ValueError):
        cost(CASE3.plant(), np.zeros((3, 3)), "J2_logdet", "continuous")


def test_bundle_invariants_discrete(rng):
    K0, p = _random_feasible(rng)
    for form in COST_FORMS:
        b = gradient_bundle(p, K0, cost_form=form)
        np.testing.assert_allclose(b.grad, 2 * b.E_K @ b.Delta_K, atol=1e-12)
        assert np.linalg.eigvalsh(b.Delta_K)[0] >= -1e-10


def test_bundle_invariants_continuous():
    p = CASE3.plant()
    K0, _ = find_feasible_init(p, CASE3.init_box, "continuous", seed=1)
    b = gradient_bundle(p, K0, "continuous")
    P = b.P
    np.testing.assert_allclose(b.grad, 2 * (p.R @ K0 - p.B.T @ P) @ b.Lambda_K, atol=1e-12)
    assert np.linalg.eigvalsh(b.Lambda_K)[0] > 0


@pytest.mark.parametrize("form", COST_FORMS)
def test_gradient_finite_differences(rng, form):
    K0, p = _random_feasible(rng)
    b = gradient_bundle(p, K0, cost_form=form)
    fd = central_difference(lambda K: cost(p, K, form), K0)
    assert np.linalg.norm(b.grad - fd) <= 1e-5 * np.linalg.norm(fd)


def test_stationary_at_optimum():
    p = CASE2.plant()
    _, Ks = solve_optimal_modified_riccati(p)
    b = gradient_bundle(p, Ks)
    assert np.abs(b.E_K).max() <= 1e-8


def test_case2_spurious_stationary_points():
    p = CASE2.plant()
    _, Ks = solve_optimal_modified_riccati(p)
    for c in (-1.0, 0.5):
        K = np.diag([Ks[0, 0], c])
        b = gradient_bundle(p, K)
        assert np.abs(b.grad).max() <= 1e-6
        assert np.abs(b.E_K).max() > 1e-3
        for kind in ("NPG", "GN"):
            trace = run_optimizer(p, K, OptimizerConfig(kind=kind, max_iter=5000))
            assert trace.converged
            assert trace.final.grad_norm_sq <= 1e-12


def test_gn_half_step_is_policy_iteration(rng):
    K0, p = _random_feasible(rng)
    b = gradient_bundle(p, K0)
    Pt = b.cert.P_tilde
    K1 = step(p, K0, OptimizerConfig(kind="GN", stepsize=0.5), bundle=b, check=False)
    np.testing.assert_allclose(K1, np.linalg.solve(p.R + p.B.T @ Pt @ p.B, p.B.T @ Pt @ p.A), atol=1e-10)
    pc = CASE3.plant()
    K0c, _ = find_feasible_init(pc, CASE3.init_box, "continuous", seed=0)
    bc = gradient_bundle(pc, K0c, "continuous")
    K1c = step(pc, K0c, OptimizerConfig(kind="GN", stepsize=0.5), "continuous", bundle=bc)
    np.testing.assert_allclose(K1c, np.linalg.solve(pc.R, pc.B.T @ bc.P), atol=1e-10)


def test_npg_step_decreases(rng):
    K0, p = _random_feasible(rng)
    K1 = step(p, K0, OptimizerConfig(kind="NPG"))
    P0, P1 = solve_dare_policy(p, K0).P, solve_dare_policy(p, K1).P
    assert cost(p, K1) <= cost(p, K0)
    assert np.linalg.eigvalsh(P1 - P0)[-1] <= 1e-10


def test_theorem_stepsize_rules():
    p = CASE3.plant()
    assert theorem_stepsize(p, "GN", "continuous") == 0.5
    assert theorem_stepsize(p, "NPG", "continuous") == pytest.approx(1 / (2 * np.linalg.norm(p.R, 2)))
    with pytest.raises(ValueError):
        theorem_stepsize(p, "PG")
    with pytest.raises(ValueError):
        OptimizerConfig(kind="PG")


def test_config_validation():
    assert OptimizerConfig(kind="GaussNewton").kind == "GN"
    with pytest.raises(ValueError):
        OptimizerConfig(kind="Adam")
    with pytest.raises(ValueError):
        OptimizerConfig(stop_rule="cost_gap")
    with pytest.raises(ValueError):
        OptimizerConfig(stepsize=-1.0)


def test_pg_step_reports_violation():
    c = get_case("nonconvex_discrete")
    p = c.plant()
    b = gradient_bundle(p, c.gains["K1"])
    with pytest.raises(FeasibilityViolation) as info:
        step(p, c.gains["K1"], OptimizerConfig(kind="PG", stepsize=1e3), bundle=b)
    assert info.value.candidate is not None


def test_pg_trace_violation_event():
    c = get_case("nonconvex_discrete")
    trace = run_optimizer(c.plant(), c.gains["K1"], OptimizerConfig(kind="PG", stepsize=1e3, max_iter=10))
    assert trace.status == "feasibility_violation" and trace.event


def test_pg_backtracking_stays_feasible():
    c = get_case("nonconvex_discrete")
    p = c.plant()
    cfg = OptimizerConfig(kind="PG", stepsize=5.0, backtracking=True, max_iter=200, tol=1e-16)
    trace = run_optimizer(p, c.gains["K1"], cfg)
    assert trace.status in ("converged", "max_iter")
    assert all(membership(p, s.K).in_set for s in trace.steps)
    assert np.diff(trace.column("cost")).max() <= 1e-12


def test_empty_trace_and_infeasible_start():
    c = get_case("nonconvex_discrete")
    trace = run_optimizer(c.plant(), c.gains["K1"], OptimizerConfig(max_iter=0))
    assert trace.status == "not-run" and trace.final is None
    with pytest.raises(InfeasibleError):
        run_optimizer(c.plant(), c.gains["K3"], OptimizerConfig())


def test_case1_gn_matches_optimum():
    c = get_case("case1")
    K0, p = find_feasible_init(c.plant(1.0), c.init_box, seed=3, gamma_slack=c.gamma_slack)
    assert membership(p, K0).in_set
    trace = run_optimizer(p, K0, OptimizerConfig(kind="GN", stepsize=0.5))
    assert trace.converged and len(trace.steps) <= 30
    _, Ks = solve_optimal_modified_riccati(p)
    np.testing.assert_allclose(trace.final.K, Ks, atol=1e-6)


def test_cost_gap_stopping_and_frozen_stepsize():
    p = CASE2.plant()
    P, Ks = solve_optimal_modified_riccati(p)
    K0, _ = find_feasible_init(p, CASE2.init_box, seed=0)
    ref = cost(p, Ks)
    cfg = OptimizerConfig(kind="NPG", stop_rule="cost_gap", cost_ref=ref, tol=1e-6, freeze_stepsize=True)
    trace = run_optimizer(p, K0, cfg)
    assert trace.converged
    assert trace.final.cost - ref <= 1e-6
    assert len(set(trace.column("eta"))) == 1


def test_hinf_recorded_every_n():
    p = CASE2.plant()
    K0, _ = find_feasible_init(p, CASE2.init_box, seed=0)
    trace = run_optimizer(p, K0, OptimizerConfig(kind="GN", hinf_every=2))
    hinf = [s.hinf for s in trace.steps]
    assert all((h is not None) == (i % 2 == 0) for i, h in enumerate(hinf))
    assert all(h < p.gamma for h in hinf if h is not None)


def test_find_feasible_init_examples():
    p = Plant(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2), 0.1 * np.eye(2), 5.0)
    K, same = find_feasible_init(p, 0.1, seed=0)
    assert same is p and membership(p, K).in_set
    K3, _ = find_feasible_init(CASE3.plant(), CASE3.init_box, "continuous", seed=0, max_tries=10_000)
    assert membership(CASE3.plant(), K3, "continuous").in_set
    with pytest.raises(SearchFailure):
        find_feasible_init(Plant([[5.0]], [[1.0]], [[1.0]], [[1.0]], [[1.0]], 1.0), 0.1, max_tries=20)


def test_find_feasible_init_deterministic():
    a = find_feasible_init(CASE2.plant(), CASE2.init_box, seed=7)[0]
    b = find_feasible_init(CASE2.plant(), CASE2.init_box, seed=7)[0]
    np.testing.assert_array_equal(a, b)
