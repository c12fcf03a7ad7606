import math

import numpy as np
import pytest

from feel_sched.analysis import (
    ConvexityParams,
    convergence_envelope,
    cumulative_bound,
    lemma_style_one_round_rhs,
    make_quadratic_fleet,
    optimal_policy_second_moment,
    run_schedule_trace,
    simplex_grid_oracle,
    verify_bandwidth,
    verify_convexity_assumptions,
    verify_one_round_bound,
    verify_optimality,
    verify_unbiasedness,
    verify_variance_identity,
)
from feel_sched.scheduler import solve_optimal_distribution
from feel_sched.trainer import ConstantLr, DiminishingLr


@pytest.fixture(scope="module")
def quad_task():
    return make_quadratic_fleet(devices=6, dim=8, samples_per_device=20, seed=100)


# ---------------------------------------------------------------------------
# one-round right-hand side
# ---------------------------------------------------------------------------

def test_one_round_rhs_at_inverse_lipschitz_rate():
    # eta = 1/l, zero variance: gap - |g|^2 / (2 l)
    assert lemma_style_one_round_rhs(1.0, 0.5, 2.0, 4.0, 0.0) == pytest.approx(1.0 - 4.0 / 4.0)


def test_one_round_rhs_stationary_point():
    assert lemma_style_one_round_rhs(0.7, 0.1, 2.0, 0.0, 0.0) == pytest.approx(0.7)


def test_one_round_rhs_matches_expanded_second_moment(rng):
    # rewrite with E|ghat|^2 = |g|^2 + V: gap - eta |g|^2 + (l/2) eta^2 E|ghat|^2
    for _ in range(20):
        gap, eta, lip = rng.uniform(0.1, 2.0, size=3)
        g_sq, var = rng.uniform(0.0, 3.0, size=2)
        direct = lemma_style_one_round_rhs(gap, eta, lip, g_sq, var)
        expanded = gap - eta * g_sq + 0.5 * lip * eta**2 * (g_sq + var)
        assert direct == pytest.approx(expanded, rel=1e-12)


# ---------------------------------------------------------------------------
# grid oracle
# ---------------------------------------------------------------------------

def test_grid_oracle_symmetric_instance():
    p, _ = simplex_grid_oracle([1, 1, 1], [1.0, 1.0, 1.0], [0.1, 0.1, 0.1], rho=0.5, step=0.01)
    np.testing.assert_allclose(p, [1 / 3] * 3, atol=0.01)


def test_grid_oracle_near_importance_limit(rng):
    n_k = np.array([1, 2, 3])
    norms = np.array([3.0, 1.0, 2.0])
    p, _ = simplex_grid_oracle(n_k, norms, [0.1, 0.1, 0.1], rho=0.999, step=0.005)
    expected = n_k * norms / (n_k * norms).sum()
    assert np.max(np.abs(p - expected)) <= 0.01


def test_grid_oracle_within_cell_of_closed_form(rng):
    n_k = rng.integers(1, 20, size=3)
    norms = rng.uniform(0.5, 2.0, size=3)
    lats = rng.uniform(0.01, 0.3, size=3)
    dist = solve_optimal_distribution(n_k, norms, lats, rho=0.5)
    p, _ = simplex_grid_oracle(n_k, norms, lats, rho=0.5, step=0.005)
    assert np.max(np.abs(p - dist.p)) <= 0.005 + 1e-12


def test_grid_oracle_refuses_large_instances():
    with pytest.raises(ValueError):
        simplex_grid_oracle([1] * 5, [1.0] * 5, [0.1] * 5, rho=0.5)
    with pytest.raises(ValueError):
        simplex_grid_oracle([1] * 3, [1.0] * 3, [0.1] * 3, rho=0.5, step=0.05)


def test_grid_oracle_four_devices(rng):
    n_k = rng.integers(1, 10, size=4)
    norms = rng.uniform(0.5, 2.0, size=4)
    lats = rng.uniform(0.05, 0.2, size=4)
    dist = solve_optimal_distribution(n_k, norms, lats, rho=0.5)
    p, val = simplex_grid_oracle(n_k, norms, lats, rho=0.5, step=0.01)
    from feel_sched.scheduler import scheduling_objective
    assert scheduling_objective(dist.p, n_k, norms, lats, 0.5) <= val * (1 + 1e-6)


# ---------------------------------------------------------------------------
# quadratic task and curvature
# ---------------------------------------------------------------------------

def test_quadratic_fleet_curvature_is_consistent(quad_task):
    params = quad_task.params
    assert 0 < params.strong_convexity <= params.lipschitz
    assert params.source == "analytic"
    assert quad_task.gap(quad_task.optimum) == pytest.approx(0.0, abs=1e-12)


def test_convexity_assumptions_hold(quad_task):
    checks = verify_convexity_assumptions(quad_task, pairs=2000, seed=1)
    for check in checks:
        assert check.passed, check.detail


def test_convexity_params_validation():
    with pytest.raises(ValueError):
        ConvexityParams(lipschitz=1.0, strong_convexity=2.0)


# ---------------------------------------------------------------------------
# traces and bounds
# ---------------------------------------------------------------------------

def test_trace_second_moment_forms_agree(quad_task):
    lats = np.linspace(0.01, 0.1, quad_task.fleet.device_count)
    trace = run_schedule_trace(quad_task, lats, rho=0.5, lr_schedule=ConstantLr(0.1),
                               rounds=10, seed=0)
    for t in range(10):
        alt = optimal_policy_second_moment(trace, quad_task.fleet.n_k, t)
        assert alt == pytest.approx(trace.expected_sq[t], rel=1e-8)


def test_cumulative_bound_first_round_reduction(quad_task):
    lats = np.linspace(0.01, 0.1, quad_task.fleet.device_count)
    mu = quad_task.params.strong_convexity
    lip = quad_task.params.lipschitz
    eta = 0.4 / (2 * mu)
    trace = run_schedule_trace(quad_task, lats, rho=0.5, lr_schedule=ConstantLr(eta),
                               rounds=3, seed=1)
    bounds = cumulative_bound(trace, quad_task.params, quad_task.fleet.n_k)
    first = (1 - 2 * mu * eta) * trace.gaps[0] + 0.5 * lip * eta**2 * trace.expected_sq[0]
    assert bounds[0] == pytest.approx(first, rel=1e-12)


def test_cumulative_bound_rejects_large_rates(quad_task):
    lats = np.linspace(0.01, 0.1, quad_task.fleet.device_count)
    mu = quad_task.params.strong_convexity
    trace = run_schedule_trace(quad_task, lats, rho=0.5,
                               lr_schedule=ConstantLr(1.5 / (2 * mu)), rounds=2, seed=1)
    with pytest.raises(ValueError):
        cumulative_bound(trace, quad_task.params, quad_task.fleet.n_k)


def test_envelope_product_is_flat(quad_task):
    lats = np.linspace(0.01, 0.1, quad_task.fleet.device_count)
    mu = quad_task.params.strong_convexity
    chi, nu = 1.0 / mu, 1.0
    traces = [
        run_schedule_trace(quad_task, lats, rho=0.5, lr_schedule=DiminishingLr(chi, nu),
                           rounds=15, seed=s)
        for s in range(3)
    ]
    zeta, envelope = convergence_envelope(traces, chi, nu, quad_task.params)
    t = np.arange(1, len(envelope) + 1)
    np.testing.assert_allclose(envelope * (t + nu), zeta, rtol=1e-12)
    assert zeta / (1 + nu) >= traces[0].gaps[0] - 1e-12


def test_envelope_requires_fast_enough_schedule(quad_task):
    mu = quad_task.params.strong_convexity
    lats = np.linspace(0.01, 0.1, quad_task.fleet.device_count)
    trace = run_schedule_trace(quad_task, lats, rho=0.5,
                               lr_schedule=DiminishingLr(0.4 / mu, 1.0), rounds=3, seed=0)
    with pytest.raises(ValueError):
        convergence_envelope([trace], 0.4 / mu, 1.0, quad_task.params)


def test_one_round_bound_deterministic_full_descent(quad_task):
    # full participation has no sampling randomness: a single run suffices
    # and the inequality must hold deterministically for eta < 2/l.
    passed, stats = verify_one_round_bound(quad_task, "full_participation", seeds=[0],
                                           rounds=10, eta=0.9 / quad_task.params.lipschitz)
    assert passed, stats
    assert stats["mean_margin"] > 0.0  # strict descent margin


def test_one_round_bound_uniform_policy_mc(quad_task):
    passed, stats = verify_one_round_bound(quad_task, "uniform_random", seeds=range(200), rounds=8)
    assert passed, stats


def test_optimal_variance_below_uniform_at_equal_latency(quad_task):
    # with equal latencies the optimal distribution minimizes the variance term
    from feel_sched.analysis import aggregation_variance
    from feel_sched.learners import ModelParams, local_gradient, ground_truth_global_gradient

    fleet = quad_task.fleet
    w = np.ones(fleet.datasets[0].dim)
    grads = [local_gradient(ModelParams(w), ds, quad_task.kind) for ds in fleet.datasets]
    norms = np.array([g.cached_norm for g in grads])
    truth = ground_truth_global_gradient(grads, fleet.n_k)
    lats = np.full(fleet.device_count, 0.05)
    dist = solve_optimal_distribution(fleet.n_k, norms, lats, rho=0.999999)
    uniform = np.full(fleet.device_count, 1.0 / fleet.device_count)
    var_opt = aggregation_variance(fleet.n_k, norms, dist.p, truth.cached_norm)
    var_uni = aggregation_variance(fleet.n_k, norms, uniform, truth.cached_norm)
    assert var_opt <= var_uni + 1e-9


# ---------------------------------------------------------------------------
# packaged suites (reduced sizes for the unit run)
# ---------------------------------------------------------------------------

def test_suite_unbiasedness_quick():
    for check in verify_unbiasedness(fleets=20, mc_draws=20_000):
        assert check.passed, f"{check.name}: {check.detail}"


def test_suite_variance_quick():
    for check in verify_variance_identity(instances=5, mc_draws=20_000):
        assert check.passed, f"{check.name}: {check.detail}"


def test_suite_optimality_quick():
    for check in verify_optimality(instances=3):
        assert check.passed, f"{check.name}: {check.detail}"


def test_suite_bandwidth():
    for check in verify_bandwidth(instances=30):
        assert check.passed, f"{check.name}: {check.detail}"
