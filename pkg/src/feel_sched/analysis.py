"""Numerical verification of the scheduling theory against oracles.

Covers: exact unbiasedness of single- and multi-device aggregation, the
closed-form variance identity, optimality of the closed-form distribution
against an exhaustive simplex grid, minimax bandwidth allocation against a
bisection oracle, and the one-round / cumulative / O(1/T) convergence
bounds on a strongly convex quadratic task with analytic curvature.

Monte Carlo checks use a 3-standard-error tolerance; everything else is
deterministic given its seeds.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import scheduler as sched_mod
from .data import FleetDatasets, PartitionSpec, RegressionTask, generate_synthetic, partition
from .learners import (
    Dataset,
    GradientVector,
    LinearRegression,
    ModelParams,
    ground_truth_global_gradient,
    local_gradient,
    local_loss,
)
from .scheduler import SchedulingDistribution, scheduling_objective

__all__ = [
    "ConvexityParams",
    "BoundTrace",
    "CheckResult",
    "lemma_style_one_round_rhs",
    "aggregation_variance",
    "expected_sq_aggregate_norm",
    "enumerate_sequences_mean",
    "simplex_grid_oracle",
    "bandwidth_bisection_oracle",
    "make_quadratic_fleet",
    "run_schedule_trace",
    "cumulative_bound",
    "convergence_envelope",
    "verify_unbiasedness",
    "verify_optimality",
    "verify_bandwidth",
    "verify_bounds",
    "run_suite",
]


# ---------------------------------------------------------------------------
# Results plumbing
# ---------------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    margin: float          # worst slack observed; >= 0 means satisfied
    tolerance: float
    detail: str = ""
    gated: bool = True

    def as_dict(self) -> Dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "margin": float(self.margin),
            "tolerance": float(self.tolerance),
            "detail": self.detail,
            "gated": self.gated,
        }


@dataclass
class ConvexityParams:
    """Curvature constants of the global loss."""

    lipschitz: float       # largest Hessian eigenvalue
    strong_convexity: float  # smallest Hessian eigenvalue
    source: str = "analytic"   # "analytic" | "estimated"

    def __post_init__(self):
        if not (0 < self.strong_convexity <= self.lipschitz):
            raise ValueError("need 0 < strong_convexity <= lipschitz")


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------

def lemma_style_one_round_rhs(
    prev_gap: float,
    eta: float,
    lipschitz: float,
    grad_sq_norm: float,
    variance: float,
) -> float:
    """One-round upper bound on the next expected loss gap:

    gap - eta * (1 - eta*l/2) * |g|^2 + (l/2) * eta^2 * Var(aggregate).
    """
    if eta <= 0:
        raise ValueError("learning rate must be positive")
    return (
        prev_gap
        - eta * (1.0 - 0.5 * lipschitz * eta) * grad_sq_norm
        + 0.5 * lipschitz * eta * eta * variance
    )


def expected_sq_aggregate_norm(
    n_k: Sequence[int],
    grad_norms: Sequence[float],
    p: Sequence[float],
) -> float:
    """E|aggregate|^2 for single-device scheduling: sum (n_k/n)^2 |g_k|^2 / p_k.

    Devices with zero probability must carry zero norm (they contribute 0).
    """
    counts = np.asarray(n_k, dtype=np.float64)
    norms = np.asarray(grad_norms, dtype=np.float64)
    probs = np.asarray(p, dtype=np.float64)
    weights = (counts / counts.sum()) ** 2 * norms**2
    if np.any((weights > 0) & (probs <= 0)):
        raise ValueError("a device with nonzero gradient has zero probability")
    terms = np.divide(weights, probs, out=np.zeros_like(weights), where=weights > 0)
    return float(terms.sum())


def aggregation_variance(
    n_k: Sequence[int],
    grad_norms: Sequence[float],
    p: Sequence[float],
    global_grad_norm: float,
) -> float:
    """Closed-form E|aggregate - g|^2 = sum (n_k/n)^2 |g_k|^2 / p_k - |g|^2."""
    return expected_sq_aggregate_norm(n_k, grad_norms, p) - global_grad_norm**2


# ---------------------------------------------------------------------------
# Brute-force oracles
# ---------------------------------------------------------------------------

def enumerate_sequences_mean(
    dist: SchedulingDistribution,
    gradients: Sequence[np.ndarray],
    n_k: Sequence[int],
    m: int,
) -> np.ndarray:
    """Exact expectation of the multi-device aggregate by enumerating every
    ordered device sequence, weighted by its sampling probability."""
    k = len(dist.p)
    if k > 6 or m > k:
        raise ValueError("enumeration oracle is for small fleets only")
    n = int(np.sum(n_k))
    mean = np.zeros(len(np.asarray(gradients[0])))
    support = [i for i in range(k) if dist.p[i] > 0]
    for sequence in itertools.permutations(support, m):
        prob = 1.0
        mass_left = 1.0
        q_used = []
        for idx in sequence:
            q = dist.p[idx] / mass_left
            q_used.append(q)
            prob *= q
            mass_left -= dist.p[idx]
        decision = sched_mod.ScheduleDecision(
            sequence=[i + 1 for i in sequence], conditional_probs=q_used
        )
        estimate = sched_mod.aggregate_multi(decision, gradients, n_k, n)
        mean += prob * estimate.values
    return mean


def simplex_grid_oracle(
    n_k: Sequence[int],
    grad_norms: Sequence[float],
    upload_latencies: Sequence[float],
    rho: float,
    step: float = 0.001,
) -> Tuple[np.ndarray, float]:
    """Exhaustive minimizer of the scheduling objective over a simplex grid.

    Tractable for K <= 4 and step <= 0.01 only; larger instances are
    refused (use the closed-form solver and random-simplex spot checks).
    """
    k = len(n_k)
    if k > 4:
        raise ValueError("grid oracle supports K <= 4; use random spot checks above that")
    if step > 0.01 + 1e-15:
        raise ValueError("grid oracle needs step <= 0.01")
    ticks = int(round(1.0 / step))
    counts = np.asarray(n_k, dtype=np.float64)
    weights = rho * (counts / counts.sum()) ** 2 * np.asarray(grad_norms, float) ** 2
    lat_cost = (1.0 - rho) * np.asarray(upload_latencies, dtype=np.float64)

    if k == 2:
        p1 = np.arange(1, ticks) / ticks
        grid = np.stack([p1, 1.0 - p1], axis=1)
    elif k == 3:
        i, j = np.meshgrid(np.arange(1, ticks), np.arange(1, ticks), indexing="ij")
        i, j = i.ravel(), j.ravel()
        keep = i + j < ticks
        i, j = i[keep], j[keep]
        grid = np.stack([i, j, ticks - i - j], axis=1) / ticks
    else:  # k == 4
        best_val, best_p = math.inf, None
        for i in range(1, ticks - 2):
            jj, kk = np.meshgrid(
                np.arange(1, ticks - i), np.arange(1, ticks - i), indexing="ij"
            )
            jj, kk = jj.ravel(), kk.ravel()
            keep = jj + kk < ticks - i
            jj, kk = jj[keep], kk[keep]
            grid = np.stack([np.full_like(jj, i), jj, kk, ticks - i - jj - kk], axis=1) / ticks
            vals = grid @ lat_cost + (weights / grid).sum(axis=1)
            at = int(np.argmin(vals))
            if vals[at] < best_val:
                best_val, best_p = float(vals[at]), grid[at]
        return best_p, best_val

    vals = grid @ lat_cost + (weights / grid).sum(axis=1)
    at = int(np.argmin(vals))
    return grid[at], float(vals[at])


def bandwidth_bisection_oracle(
    snr_linear: Sequence[float],
    total_bandwidth_hz: float,
    payload_bits: float,
    rel_tol: float = 1e-12,
) -> Tuple[np.ndarray, float]:
    """Minimax upload latency by bisection on the common finish time T:
    the split B_m = bits / (T * R_m) is feasible iff sum_m B_m <= B."""
    rates = np.log2(1.0 + np.asarray(snr_linear, dtype=np.float64))
    need = payload_bits * (1.0 / rates)

    def feasible(latency: float) -> bool:
        return float(np.sum(need / latency)) <= total_bandwidth_hz

    hi = 1.0
    while not feasible(hi):
        hi *= 2.0
    lo = hi / 2.0
    while feasible(lo):
        lo /= 2.0
        if lo < 1e-300:
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= rel_tol * hi:
            break
    bands = need / hi
    return bands, hi


# ---------------------------------------------------------------------------
# Quadratic task harness: traces for the convergence bounds
# ---------------------------------------------------------------------------

@dataclass
class QuadraticFleet:
    fleet: FleetDatasets
    params: ConvexityParams
    optimum: np.ndarray
    optimal_loss: float

    @property
    def kind(self) -> LinearRegression:
        return LinearRegression()

    def gap(self, w: np.ndarray) -> float:
        model = ModelParams(w)
        pooled = self.fleet.pooled()
        return local_loss(model, pooled, self.kind) - self.optimal_loss


def make_quadratic_fleet(
    devices: int,
    dim: int,
    samples_per_device: int,
    seed: int,
    noise_sd: float = 0.5,
) -> QuadraticFleet:
    """Linear-regression fleet with analytic curvature constants taken from
    the pooled-data Hessian eigenvalues."""
    total = devices * samples_per_device
    pool = generate_synthetic(RegressionTask(dim, noise_sd, true_w_seed=seed + 1), total, seed)
    fleet = partition(pool, devices, PartitionSpec(scheme="iid_uniform", seed=seed + 2))
    x, y = pool.features, pool.labels.astype(np.float64)
    hessian = x.T @ x / total
    eigs = np.linalg.eigvalsh(hessian)
    if eigs[0] <= 0:
        raise ValueError("pooled Hessian is singular; add samples or reduce dim")
    optimum = np.linalg.solve(hessian, x.T @ y / total)
    optimal_loss = local_loss(ModelParams(optimum), pool, LinearRegression())
    return QuadraticFleet(
        fleet=fleet,
        params=ConvexityParams(lipschitz=float(eigs[-1]), strong_convexity=float(eigs[0])),
        optimum=optimum,
        optimal_loss=optimal_loss,
    )


@dataclass
class BoundTrace:
    """Realized per-round quantities of one seeded schedule run."""

    gaps: np.ndarray               # length T+1: gap before round 1, then after each round
    etas: np.ndarray               # length T
    grad_sq: np.ndarray            # |g_t|^2, length T
    variances: np.ndarray          # closed-form Var(aggregate), length T
    expected_sq: np.ndarray        # closed-form E|aggregate|^2, length T
    aggregate_norms: np.ndarray    # realized |aggregate|, length T
    lambda_stars: np.ndarray       # length T (nan for baselines)
    device_norms: np.ndarray       # T x K local gradient norms
    upload_latencies: np.ndarray   # static K
    rho: float


def run_schedule_trace(
    task: QuadraticFleet,
    upload_latencies: Sequence[float],
    rho: Optional[float],
    lr_schedule,
    rounds: int,
    seed: int,
    w_init: Optional[np.ndarray] = None,
    policy: str = "importance_channel",
) -> BoundTrace:
    """Run `rounds` scheduled steps on the quadratic task and record
    everything the bound evaluations need.

    Policies select one device per round; `rho=None` with a baseline policy
    name runs that baseline instead of the closed-form optimal
    distribution. The special policy "full_participation" applies the exact
    global gradient every round (zero scheduling variance).
    """
    fleet = task.fleet
    n_k = fleet.n_k
    n = fleet.n
    k = fleet.device_count
    lats = np.asarray(upload_latencies, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))

    w = np.zeros(fleet.datasets[0].dim) if w_init is None else np.array(w_init, dtype=np.float64)
    gaps = [task.gap(w)]
    etas, grad_sq, variances, expected_sq = [], [], [], []
    aggregate_norms, lambda_stars, device_norms = [], [], []

    for t in range(1, rounds + 1):
        grads = [local_gradient(ModelParams(w), ds, task.kind) for ds in fleet.datasets]
        norms = np.array([g.cached_norm for g in grads])
        truth = ground_truth_global_gradient(grads, n_k)

        if policy == "full_participation":
            dist = SchedulingDistribution(p=np.full(k, 1.0 / k))
            aggregate = truth
        else:
            if policy == "importance_channel":
                dist = sched_mod.solve_optimal_distribution(n_k, norms, lats, rho)
            else:
                dist = sched_mod.baseline_distribution(policy, n_k, norms, lats)
            picked = sched_mod.sample_one(dist, rng)
            aggregate = sched_mod.aggregate_single(
                grads[picked - 1], n_k[picked - 1], n, float(dist.p[picked - 1])
            )

        eta = lr_schedule.at(t)
        w = w - eta * aggregate.values

        gaps.append(task.gap(w))
        etas.append(eta)
        grad_sq.append(truth.cached_norm**2)
        if policy == "full_participation":
            expected_sq.append(grad_sq[-1])
        else:
            expected_sq.append(expected_sq_aggregate_norm(n_k, norms, dist.p))
        variances.append(expected_sq[-1] - grad_sq[-1])
        aggregate_norms.append(aggregate.cached_norm)
        lambda_stars.append(math.nan if dist.lambda_star is None else dist.lambda_star)
        device_norms.append(norms)

    return BoundTrace(
        gaps=np.array(gaps),
        etas=np.array(etas),
        grad_sq=np.array(grad_sq),
        variances=np.array(variances),
        expected_sq=np.array(expected_sq),
        aggregate_norms=np.array(aggregate_norms),
        lambda_stars=np.array(lambda_stars),
        device_norms=np.array(device_norms),
        upload_latencies=lats,
        rho=math.nan if rho is None else rho,
    )


def cumulative_bound(trace: BoundTrace, params: ConvexityParams, n_k: Sequence[int]) -> np.ndarray:
    """Per-round cumulative upper bound on the expected loss gap.

    bound[t-1] bounds the gap after round t:

        prod_{i<=t}(1 - 2*mu*eta_i) * gap_1
        + (l/2) * sum_{i<=t} A_i * eta_i^2 * E|aggregate_i|^2

    with A_i the product of the remaining contraction factors. The second
    moment uses the realized per-round closed form, which for the optimal
    policy equals (1/n) sum_k n_k |g_k| sqrt(((1-rho) T_k + lambda*) / rho).
    """
    mu, lip = params.strong_convexity, params.lipschitz
    factors = 1.0 - 2.0 * mu * trace.etas
    if np.any(factors < -1e-12) or np.any(trace.etas > 1.0 / (2.0 * mu) * (1 + 1e-12)):
        raise ValueError(
            "cumulative bound needs eta <= 1/(2*mu) so contraction factors stay in [0, 1)"
        )
    factors = np.clip(factors, 0.0, 1.0)
    rounds = len(trace.etas)
    bounds = np.empty(rounds)
    lead = trace.gaps[0]
    tail = 0.0  # sum of A_i * eta_i^2 * E|ghat_i|^2, updated multiplicatively
    for t in range(rounds):
        lead *= factors[t]
        tail = tail * factors[t] + trace.etas[t] ** 2 * trace.expected_sq[t]
        bounds[t] = lead + 0.5 * lip * tail
    return bounds


def optimal_policy_second_moment(
    trace: BoundTrace, n_k: Sequence[int], round_index: int
) -> float:
    """Second moment of the aggregate via the multiplier form,
    (1/n) sum_k n_k |g_k| sqrt(((1-rho) T_k + lambda*)/rho); equals the
    1/p closed form when the distribution is the optimal one."""
    counts = np.asarray(n_k, dtype=np.float64)
    norms = trace.device_norms[round_index]
    lam = trace.lambda_stars[round_index]
    shifted = (1.0 - trace.rho) * trace.upload_latencies + lam
    return float(
        np.sum(counts * norms * np.sqrt(shifted / trace.rho)) / counts.sum()
    )


def convergence_envelope(
    traces: Sequence[BoundTrace],
    chi: float,
    nu: float,
    params: ConvexityParams,
) -> Tuple[float, np.ndarray]:
    """O(1/T) envelope zeta/(t+nu) with zeta from the realized largest
    aggregate norm across all rounds and seeds (post hoc) and the initial
    gap."""
    mu, lip = params.strong_convexity, params.lipschitz
    if chi <= 1.0 / (2.0 * mu):
        raise ValueError("envelope needs chi > 1/(2*mu)")
    g_max = max(float(tr.aggregate_norms.max()) for tr in traces)
    gap_1 = traces[0].gaps[0]
    zeta = max(
        lip * g_max**2 * chi**2 / (2.0 * (2.0 * mu * chi - 1.0)),
        (1.0 + nu) * gap_1,
    )
    rounds = len(traces[0].etas)
    # gaps[t] is the gap entering round t+1, i.e. after t rounds.
    envelope = zeta / (np.arange(1, rounds + 2) + nu)
    return zeta, envelope


# ---------------------------------------------------------------------------
# Verification suites
# ---------------------------------------------------------------------------

def _random_fleet_instance(rng, max_devices=10, dim=6):
    k = int(rng.integers(2, max_devices + 1))
    n_k = rng.integers(1, 50, size=k)
    grads = [rng.standard_normal(dim) for _ in range(k)]
    p = rng.dirichlet(np.ones(k)) * 0.9 + 0.1 / k  # strictly positive
    return k, n_k, grads, p


def verify_single_unbiasedness(seed: int = 2024, fleets: int = 100) -> CheckResult:
    """Exact single-device expectation over the distribution, no sampling."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(fleets):
        k, n_k, grads, p = _random_fleet_instance(rng)
        n = int(n_k.sum())
        truth = ground_truth_global_gradient(grads, n_k).values
        mean = sum(
            p[i] * sched_mod.aggregate_single(grads[i], int(n_k[i]), n, float(p[i])).values
            for i in range(k)
        )
        worst = max(worst, float(np.max(np.abs(mean - truth))))
    return CheckResult(
        name="single_device_unbiased_algebraic",
        passed=worst < 1e-12,
        margin=1e-12 - worst,
        tolerance=1e-12,
        detail=f"max deviation {worst:.3e} over {fleets} fleets",
    )


def verify_sequential_enumeration(seed: int = 2025) -> CheckResult:
    """Exact sequential expectation by enumeration, K <= 5, M <= 3."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, m in [(3, 2), (4, 3), (5, 3), (5, 2), (2, 2), (3, 3)]:
        n_k = rng.integers(1, 20, size=k)
        grads = [rng.standard_normal(5) for _ in range(k)]
        p = rng.dirichlet(np.ones(k)) * 0.8 + 0.2 / k
        dist = SchedulingDistribution(p=p)
        truth = ground_truth_global_gradient(grads, n_k).values
        mean = enumerate_sequences_mean(dist, grads, n_k, m)
        worst = max(worst, float(np.max(np.abs(mean - truth))))
    return CheckResult(
        name="sequential_unbiased_enumeration",
        passed=worst < 1e-12,
        margin=1e-12 - worst,
        tolerance=1e-12,
        detail=f"max deviation {worst:.3e}",
    )


def verify_sequential_monte_carlo(seed: int = 2026, mc_draws: int = 100_000) -> CheckResult:
    """Monte Carlo agreement of the sequential aggregate with the truth."""
    rng = np.random.default_rng(seed)
    k, m = 5, 3
    n_k = rng.integers(1, 20, size=k)
    grads = [rng.standard_normal(4) for _ in range(k)]
    p = rng.dirichlet(np.ones(k)) * 0.8 + 0.2 / k
    dist = SchedulingDistribution(p=p)
    n = int(n_k.sum())
    truth = ground_truth_global_gradient(grads, n_k).values
    draws = np.empty((mc_draws, 4))
    for i in range(mc_draws):
        decision = sched_mod.sample_without_replacement(dist, m, rng)
        draws[i] = sched_mod.aggregate_multi(decision, grads, n_k, n).values
    err = np.abs(draws.mean(axis=0) - truth)
    se = draws.std(axis=0, ddof=1) / math.sqrt(mc_draws)
    slack = float(np.min(3.0 * se - err))
    return CheckResult(
        name="sequential_unbiased_monte_carlo",
        passed=bool(np.all(err <= 3.0 * se)),
        margin=slack,
        tolerance=0.0,
        detail=f"max |error|/se = {float(np.max(err / se)):.2f} over {mc_draws} draws",
    )


def verify_unbiasedness(seed: int = 2024, fleets: int = 100, mc_draws: int = 100_000) -> List[CheckResult]:
    return [
        verify_single_unbiasedness(seed, fleets),
        verify_sequential_enumeration(seed + 1),
        verify_sequential_monte_carlo(seed + 2, mc_draws),
    ]


def verify_variance_identity(seed: int = 77, instances: int = 20, mc_draws: int = 100_000) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_sigma = 0.0
    for _ in range(instances):
        k, n_k, grads, p = _random_fleet_instance(rng, max_devices=8)
        n = int(n_k.sum())
        truth = ground_truth_global_gradient(grads, n_k).values
        norms = np.array([np.linalg.norm(g) for g in grads])
        closed = aggregation_variance(n_k, norms, p, float(np.linalg.norm(truth)))
        # Per-device squared deviation of the rescaled gradient; a draw's
        # squared error is exactly the indicator of the drawn device.
        indicators = np.array([
            sched_mod.importance_indicator(grads[i], int(n_k[i]), n, float(p[i]), truth)
            for i in range(k)
        ])
        picks = rng.choice(k, size=mc_draws, p=p)
        sample = indicators[picks]
        se = sample.std(ddof=1) / math.sqrt(mc_draws)
        worst_sigma = max(worst_sigma, abs(sample.mean() - closed) / se)
    return [CheckResult(
        name="variance_identity_closed_form_vs_mc",
        passed=worst_sigma <= 3.0,
        margin=3.0 - worst_sigma,
        tolerance=3.0,
        detail=f"worst deviation {worst_sigma:.2f} standard errors over {instances} instances",
    )]


def verify_optimality(seed: int = 31, instances: int = 50, step: float = 0.001) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_rel = -math.inf
    worst_sum = 0.0
    for _ in range(instances):
        n_k = rng.integers(1, 40, size=3)
        norms = rng.uniform(0.1, 5.0, size=3)
        lats = rng.uniform(0.001, 0.5, size=3)
        for rho in (0.1, 0.5, 0.9):
            dist = sched_mod.solve_optimal_distribution(n_k, norms, lats, rho)
            closed_val = scheduling_objective(dist.p, n_k, norms, lats, rho)
            _, grid_val = simplex_grid_oracle(n_k, norms, lats, rho, step)
            worst_rel = max(worst_rel, (closed_val - grid_val) / abs(grid_val))
            worst_sum = max(worst_sum, abs(float(dist.p.sum()) - 1.0))
    checks = [
        CheckResult(
            name="closed_form_beats_simplex_grid",
            passed=worst_rel <= 1e-6,
            margin=1e-6 - worst_rel,
            tolerance=1e-6,
            detail=f"worst (closed - grid)/grid = {worst_rel:.3e} over {instances} x 3 instances",
        ),
        CheckResult(
            name="distribution_normalized",
            passed=worst_sum <= 1e-10,
            margin=1e-10 - worst_sum,
            tolerance=1e-10,
            detail=f"worst |sum p - 1| = {worst_sum:.3e}",
        ),
    ]
    return checks


def verify_bandwidth(seed: int = 19, instances: int = 100, payload_bits: float = 16e3) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    from .latency import allocate_bandwidth  # local import avoids cycles

    worst_sum, worst_eq, worst_oracle = 0.0, 0.0, 0.0
    for _ in range(instances):
        m = int(rng.integers(2, 9))
        snrs = 10 ** rng.uniform(0.0, 4.0, size=m)
        total_b = float(10 ** rng.uniform(5.0, 7.5))
        bands = allocate_bandwidth(snrs, total_b)
        lats = payload_bits / (bands * np.log2(1.0 + snrs))
        worst_sum = max(worst_sum, abs(bands.sum() - total_b) / total_b)
        worst_eq = max(worst_eq, float(lats.max() - lats.min()) / float(lats.max()))
        oracle_bands, _ = bandwidth_bisection_oracle(snrs, total_b, payload_bits)
        worst_oracle = max(
            worst_oracle, float(np.max(np.abs(bands - oracle_bands) / oracle_bands))
        )
    return [
        CheckResult("bandwidth_sums_to_budget", worst_sum <= 1e-9, 1e-9 - worst_sum, 1e-9,
                    f"worst relative sum error {worst_sum:.3e}"),
        CheckResult("upload_latencies_equalized", worst_eq <= 1e-9, 1e-9 - worst_eq, 1e-9,
                    f"worst relative latency spread {worst_eq:.3e}"),
        CheckResult("matches_bisection_oracle", worst_oracle <= 1e-6, 1e-6 - worst_oracle, 1e-6,
                    f"worst relative allocation gap {worst_oracle:.3e}"),
    ]


def verify_convexity_assumptions(
    task: QuadraticFleet,
    pairs: int = 10_000,
    seed: int = 3,
    span: float = 5.0,
) -> List[CheckResult]:
    """Check the curvature constants against random point pairs: the
    gradient must be l-Lipschitz and the loss mu-strongly convex."""
    rng = np.random.default_rng(seed)
    pooled = task.fleet.pooled()
    dim = pooled.dim
    kind = task.kind
    lip, mu = task.params.lipschitz, task.params.strong_convexity

    worst_lip, worst_convex = -math.inf, -math.inf
    for _ in range(pairs):
        u = span * rng.standard_normal(dim)
        v = span * rng.standard_normal(dim)
        gu = local_gradient(ModelParams(u), pooled, kind).values
        gv = local_gradient(ModelParams(v), pooled, kind).values
        gap = np.linalg.norm(u - v)
        worst_lip = max(worst_lip, float(np.linalg.norm(gu - gv) - lip * gap))
        lower = (
            local_loss(ModelParams(v), pooled, kind)
            + gv @ (u - v)
            + 0.5 * mu * gap**2
        )
        worst_convex = max(worst_convex, float(lower - local_loss(ModelParams(u), pooled, kind)))
    return [
        CheckResult("gradient_lipschitz_bound", worst_lip <= 1e-8, 1e-8 - worst_lip, 1e-8,
                    f"worst |grad(u)-grad(v)| - l|u-v| = {worst_lip:.3e} over {pairs} pairs"),
        CheckResult("strong_convexity_bound", worst_convex <= 1e-8, 1e-8 - worst_convex, 1e-8,
                    f"worst lower-bound excess {worst_convex:.3e} over {pairs} pairs"),
    ]


def verify_one_round_bound(
    task: QuadraticFleet,
    policy: str,
    seeds: Sequence[int],
    upload_latencies: Optional[Sequence[float]] = None,
    rho: float = 0.5,
    rounds: int = 20,
    eta: float = 0.5,
) -> Tuple[bool, Dict[str, float]]:
    """Monte Carlo check of the one-round recursion for a given policy.

    Runs one constant-rate schedule per seed and tests, round by round,
    that the mean next gap stays below the mean predicted right-hand side
    within three standard errors. Returns (passed, margin statistics).
    """
    from .trainer import ConstantLr  # local import avoids a cycle

    if upload_latencies is None:
        rng = np.random.default_rng(1)
        upload_latencies = np.sort(rng.uniform(0.002, 0.2, size=task.fleet.device_count))
    eta = min(eta, 0.9 / task.params.lipschitz)
    traces = [
        run_schedule_trace(task, upload_latencies, rho, ConstantLr(eta), rounds, seed=s, policy=policy)
        for s in seeds
    ]
    gaps = np.stack([tr.gaps for tr in traces])
    rhs = np.stack([
        np.array([
            lemma_style_one_round_rhs(tr.gaps[t], tr.etas[t], task.params.lipschitz,
                                      tr.grad_sq[t], tr.variances[t])
            for t in range(rounds)
        ])
        for tr in traces
    ])
    diff = gaps[:, 1:] - rhs
    mean = diff.mean(axis=0)
    se = diff.std(axis=0, ddof=1) / math.sqrt(len(seeds)) if len(seeds) > 1 else np.zeros_like(mean)
    slack = mean - 3.0 * se
    stats = {
        "worst_violation": float(slack.max()),
        "mean_margin": float(-mean.mean()),
        "rounds": float(rounds),
        "seeds": float(len(seeds)),
    }
    return bool(slack.max() <= 0.0), stats


def verify_bounds(
    seed: int = 404,
    devices: int = 10,
    dim: int = 20,
    samples_per_device: int = 30,
    rounds: int = 200,
    mc_seeds: int = 100,
    rho: float = 0.5,
) -> List[CheckResult]:
    """Monte Carlo verification of the one-round recursion, the cumulative
    bound, and the O(1/T) envelope on the quadratic task."""
    from .trainer import DiminishingLr  # local import avoids a cycle

    task = make_quadratic_fleet(devices, dim, samples_per_device, seed)
    mu = task.params.strong_convexity
    chi, nu = 1.0 / mu, 1.0
    schedule = DiminishingLr(chi=chi, nu=nu)
    rng = np.random.default_rng(seed)
    lats = np.sort(rng.uniform(0.002, 0.2, size=devices))

    traces = [
        run_schedule_trace(task, lats, rho, schedule, rounds, seed=seed + 1000 + s)
        for s in range(mc_seeds)
    ]
    gaps = np.stack([tr.gaps for tr in traces])            # seeds x (T+1)
    mean_gap = gaps.mean(axis=0)
    se_gap = gaps.std(axis=0, ddof=1) / math.sqrt(mc_seeds)

    checks: List[CheckResult] = []

    # One-round recursion: mean gap_{t+1} <= mean rhs_t (3 se tolerance).
    rhs = np.stack([
        np.array([
            lemma_style_one_round_rhs(
                tr.gaps[t], tr.etas[t], task.params.lipschitz, tr.grad_sq[t], tr.variances[t]
            )
            for t in range(rounds)
        ])
        for tr in traces
    ])
    diff = gaps[:, 1:] - rhs
    slack = diff.mean(axis=0) - 3.0 * diff.std(axis=0, ddof=1) / math.sqrt(mc_seeds)
    worst = float(slack.max())
    checks.append(CheckResult(
        "one_round_recursion_holds", worst <= 0.0, -worst, 0.0,
        f"worst (mean gap - mean rhs + 3se) = {worst:.3e}",
    ))

    # Cumulative bound with realized second moments.
    bound = np.stack([cumulative_bound(tr, task.params, task.fleet.n_k) for tr in traces])
    over = mean_gap[1:] - (bound.mean(axis=0) + 3.0 * se_gap[1:])
    worst = float(over.max())
    checks.append(CheckResult(
        "cumulative_bound_holds", worst <= 0.0, -worst, 0.0,
        f"worst (mean gap - mean bound - 3se) = {worst:.3e}",
    ))

    # Multiplier form of the second moment agrees with the 1/p form.
    worst_rel = 0.0
    for tr in traces[: min(5, len(traces))]:
        for t in range(rounds):
            alt = optimal_policy_second_moment(tr, task.fleet.n_k, t)
            ref = tr.expected_sq[t]
            if ref > 0:
                worst_rel = max(worst_rel, abs(alt - ref) / ref)
    checks.append(CheckResult(
        "second_moment_multiplier_form", worst_rel <= 1e-8, 1e-8 - worst_rel, 1e-8,
        f"worst relative disagreement {worst_rel:.3e}",
    ))

    # O(1/T) envelope.
    zeta, envelope = convergence_envelope(traces, chi, nu, task.params)
    over = mean_gap - (envelope + 3.0 * se_gap)
    worst = float(over.max())
    checks.append(CheckResult(
        "inverse_t_envelope_holds", worst <= 0.0, -worst, 0.0,
        f"zeta = {zeta:.4g}; worst excess over envelope {worst:.3e}",
    ))

    # Strong-convexity gradient-dominance: |g|^2 >= 2 mu gap, every round.
    worst = -math.inf
    for tr in traces:
        lhs = tr.grad_sq
        rhs_dom = 2.0 * mu * tr.gaps[:-1]
        worst = max(worst, float((rhs_dom - lhs).max()))
    checks.append(CheckResult(
        "gradient_dominance_holds", worst <= 1e-9, 1e-9 - worst, 1e-9,
        f"worst (2 mu gap - |g|^2) = {worst:.3e}",
    ))
    return checks


SUITES: Dict[str, Callable[[], List[CheckResult]]] = {
    "unbiasedness": lambda: verify_unbiasedness() + verify_variance_identity(),
    "optimality": lambda: verify_optimality(instances=10),
    "bandwidth": lambda: verify_bandwidth(),
    "bounds": lambda: verify_bounds(mc_seeds=40),
}


def run_suite(name: str) -> List[CheckResult]:
    """Run one named verification suite (or "all") at fixed seeds."""
    if name == "all":
        results: List[CheckResult] = []
        for suite in SUITES.values():
            results.extend(suite())
        return results
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; pick from {sorted(SUITES)} or 'all'")
    return SUITES[name]()
