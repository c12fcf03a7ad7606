"""Scheduling distributions, device sampling, and unbiased aggregation.

The importance- and channel-aware policy assigns each device a selection
probability proportional to its data share times its gradient norm, damped
by the square root of its (shifted) upload latency:

    p_k = (n_k / n) * |g_k| * sqrt(rho / ((1 - rho) * T_k + lambda_star))

where lambda_star is the multiplier that normalizes the vector, found by
bisection. rho in (0, 1) trades update importance against channel quality;
the rho -> 0 and rho -> 1 limits are served by dedicated baselines because
the closed form degenerates at the endpoints.

Multi-device rounds sample a sequence without replacement, renormalizing
the distribution after every pick, and aggregate with the ordered unbiased
estimator (each term corrects by the partial sum of already-seen scaled
gradients), so the aggregate is exactly unbiased for every M.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from .learners import GradientVector

__all__ = [
    "SchedulerConfig",
    "SchedulingDistribution",
    "ScheduleDecision",
    "importance_indicator",
    "scheduling_objective",
    "solve_optimal_distribution",
    "baseline_distribution",
    "auto_rho",
    "sample_one",
    "sample_without_replacement",
    "aggregate_single",
    "aggregate_multi",
    "classical_subset_average",
]

POLICIES = ("importance_channel", "channel_aware", "importance_aware", "uniform_random")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class SchedulerConfig:
    policy: str = "importance_channel"
    devices_per_round: int = 1          # M
    rho: Union[float, str] = 0.5        # in (0,1), or "auto"
    lambda_tolerance: float = 1e-10
    compute_max_over: str = "fleet"     # "fleet" | "scheduled"
    record_distribution: bool = False

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy: {self.policy!r}")
        if self.devices_per_round < 1:
            raise ValueError("devices_per_round must be >= 1")
        if self.policy == "importance_channel" and self.rho != "auto":
            if not (0.0 < float(self.rho) < 1.0):
                raise ValueError(
                    "importance_channel needs rho strictly inside (0, 1); "
                    "use the dedicated baselines for the endpoints"
                )
        if self.lambda_tolerance <= 0:
            raise ValueError("lambda_tolerance must be positive")


@dataclass
class SchedulingDistribution:
    """Probability vector over devices plus the multiplier that produced it."""

    p: np.ndarray
    lambda_star: Optional[float] = None
    fallback_uniform: bool = False
    solver_evals: int = 0

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        if np.any(self.p < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(self.p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {self.p.sum()!r}, not 1")


@dataclass
class ScheduleDecision:
    """An ordered selection of M distinct devices (1-based ids) with the
    conditional probability actually used for each pick."""

    sequence: List[int]
    conditional_probs: List[float]
    padded_uniform: bool = False
    distribution: Optional[SchedulingDistribution] = None

    def __post_init__(self):
        if len(self.sequence) != len(set(self.sequence)):
            raise ValueError("scheduled sequence must not repeat devices")
        if len(self.sequence) != len(self.conditional_probs):
            raise ValueError("need one conditional probability per pick")
        # renormalization round-off can land a hair above 1
        self.conditional_probs = [
            1.0 if 1.0 < q <= 1.0 + 1e-9 else float(q) for q in self.conditional_probs
        ]
        if any(not (0.0 < q <= 1.0) for q in self.conditional_probs):
            raise ValueError("conditional probabilities must lie in (0, 1]")


def _as_array(g: Union[GradientVector, np.ndarray]) -> np.ndarray:
    return g.values if isinstance(g, GradientVector) else np.asarray(g, dtype=np.float64)


# ---------------------------------------------------------------------------
# Importance metric and objective
# ---------------------------------------------------------------------------

def importance_indicator(
    local_grad: Union[GradientVector, np.ndarray],
    n_k: int,
    n: int,
    p_k: float,
    global_grad: Union[GradientVector, np.ndarray],
) -> float:
    """Squared distance between the rescaled local gradient and the
    ground-truth global gradient (diagnostic metric)."""
    if p_k <= 0:
        raise ValueError("importance indicator needs p_k > 0")
    scaled = (n_k / (n * p_k)) * _as_array(local_grad)
    diff = scaled - _as_array(global_grad)
    return float(diff @ diff)


def scheduling_objective(
    p: Sequence[float],
    n_k: Sequence[int],
    grad_norms: Sequence[float],
    upload_latencies: Sequence[float],
    rho: float,
) -> float:
    """Expected divergence-plus-latency cost of a scheduling distribution:

        sum_k [ rho * (n_k/n)^2 * |g_k|^2 / p_k + (1 - rho) * p_k * T_k ]

    Devices with zero probability must carry zero gradient norm; their
    divergence term is 0 by convention.
    """
    p = np.asarray(p, dtype=np.float64)
    counts = np.asarray(n_k, dtype=np.float64)
    norms = np.asarray(grad_norms, dtype=np.float64)
    lats = np.asarray(upload_latencies, dtype=np.float64)
    n = counts.sum()
    weights = rho * (counts / n) ** 2 * norms**2
    divergence = np.divide(weights, p, out=np.zeros_like(weights), where=weights > 0)
    if np.any((weights > 0) & (p <= 0)):
        return math.inf
    latency = (1.0 - rho) * p * np.where(p > 0, lats, 0.0)
    return float(divergence.sum() + latency.sum())


def auto_rho(
    indicators: Sequence[float],
    round_latencies: Sequence[float],
) -> float:
    """Pick rho so the two cost terms start out the same order of magnitude:
    rho * mean(divergence) == (1 - rho) * mean(latency)."""
    mean_div = float(np.mean(indicators))
    mean_lat = float(np.mean(round_latencies))
    if mean_div <= 0:
        return 0.5
    rho = mean_lat / (mean_div + mean_lat)
    return min(max(rho, 1e-9), 1.0 - 1e-9)


# ---------------------------------------------------------------------------
# Optimal distribution (closed form + bisection on the multiplier)
# ---------------------------------------------------------------------------

def solve_optimal_distribution(
    n_k: Sequence[int],
    grad_norms: Sequence[float],
    upload_latencies: Sequence[float],
    rho: float,
    tolerance: float = 1e-10,
) -> SchedulingDistribution:
    """Minimize `scheduling_objective` over the probability simplex.

    The minimizer is p_k = a_k / sqrt(c_k + lambda) with
    a_k = (n_k/n) * |g_k| * sqrt(rho) and c_k = (1 - rho) * T_k; the sum
    phi(lambda) = sum_k p_k(lambda) is strictly decreasing, so lambda_star
    is found by bisection until |phi - 1| <= tolerance.

    Devices with zero gradient norm (their update is the zero vector) or an
    unreachable channel get probability exactly 0 and are never sampled.
    If every norm is zero the uniform distribution is returned with
    `fallback_uniform` set.
    """
    if not (0.0 < rho < 1.0):
        raise ValueError("rho must lie strictly inside (0, 1)")
    counts = np.asarray(n_k, dtype=np.float64)
    norms = np.asarray(grad_norms, dtype=np.float64)
    lats = np.asarray(upload_latencies, dtype=np.float64)
    if counts.shape != norms.shape or counts.shape != lats.shape:
        raise ValueError("n_k, grad_norms and upload_latencies must align")
    if np.any(counts <= 0):
        raise ValueError("sample counts must be positive")
    if np.any(norms < 0):
        raise ValueError("gradient norms must be nonnegative")

    total = counts.sum()
    active = (norms > 0) & np.isfinite(lats)
    if not np.any(active):
        if not np.any(norms > 0):
            k = len(counts)
            return SchedulingDistribution(
                p=np.full(k, 1.0 / k), lambda_star=None, fallback_uniform=True
            )
        raise ValueError("no device has both a nonzero gradient and a finite latency")

    amp = (counts[active] / total) * norms[active] * math.sqrt(rho)
    shift = (1.0 - rho) * lats[active]

    evals = 0

    def phi(lam: float) -> float:
        nonlocal evals
        evals += 1
        return float(np.sum(amp / np.sqrt(shift + lam)))

    # Left bracket end: just above the pole at -min(shift); shrink the
    # offset until the sum exceeds 1 there.
    floor = -float(np.min(shift))
    scale = max(1.0, float(np.max(shift) - np.min(shift)), abs(floor))
    delta = 1e-12 * scale
    lo = floor + delta
    while phi(lo) <= 1.0 and delta > 1e-300:
        delta *= 1e-4
        lo = floor + delta
    if phi(lo) <= 1.0:
        raise ArithmeticError("could not bracket the multiplier from below")

    hi = lo + scale
    while phi(hi) >= 1.0:
        hi = lo + 2.0 * (hi - lo)

    lam = 0.5 * (lo + hi)
    for _ in range(200):
        value = phi(lam)
        if abs(value - 1.0) <= tolerance:
            break
        if value > 1.0:
            lo = lam
        else:
            hi = lam
        new_lam = 0.5 * (lo + hi)
        if new_lam == lam:
            break
        lam = new_lam

    p = np.zeros(len(counts))
    p[active] = amp / np.sqrt(shift + lam)
    # The bisection can stall at the float-resolution limit of the
    # multiplier when the distribution concentrates on one device; a final
    # normalization (relative change <= the stall residual) restores an
    # exact unit sum.
    p /= p.sum()
    return SchedulingDistribution(p=p, lambda_star=lam, solver_evals=evals)


def baseline_distribution(
    policy: str,
    n_k: Sequence[int],
    grad_norms: Sequence[float],
    upload_latencies: Sequence[float],
) -> SchedulingDistribution:
    """Reference policies: channel-only, importance-only, and uniform.

    channel_aware is deterministic (a one-hot vector on the minimum-latency
    device, ties to the lowest id); importance_aware weighs devices by
    n_k * |g_k|; uniform_random is flat.
    """
    counts = np.asarray(n_k, dtype=np.float64)
    k = len(counts)
    if policy == "uniform_random":
        return SchedulingDistribution(p=np.full(k, 1.0 / k))
    if policy == "channel_aware":
        lats = np.asarray(upload_latencies, dtype=np.float64)
        p = np.zeros(k)
        p[int(np.argmin(lats))] = 1.0
        return SchedulingDistribution(p=p)
    if policy == "importance_aware":
        weights = counts * np.asarray(grad_norms, dtype=np.float64)
        if weights.sum() <= 0:
            return SchedulingDistribution(
                p=np.full(k, 1.0 / k), fallback_uniform=True
            )
        return SchedulingDistribution(p=weights / weights.sum())
    raise ValueError(f"not a baseline policy: {policy!r}")


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _inverse_cdf_pick(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Sample an index by inverse CDF in ascending index order."""
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0  # absorb float round-off in the last bin
    return int(np.searchsorted(cdf, rng.random(), side="right"))


def sample_one(dist: SchedulingDistribution, rng: np.random.Generator) -> int:
    """Draw a single device id (1-based) from the distribution."""
    return _inverse_cdf_pick(dist.p / dist.p.sum(), rng) + 1


def sample_without_replacement(
    dist: SchedulingDistribution,
    m: int,
    rng: np.random.Generator,
) -> ScheduleDecision:
    """Sequentially draw `m` distinct devices, renormalizing after each pick.

    The conditional probability of the j-th pick is its remaining mass over
    the total remaining mass, and each value actually used is recorded for
    the aggregation step. When fewer than `m` devices carry positive mass
    the tail picks fall back to a uniform draw over the unselected devices,
    flagged via `padded_uniform`.
    """
    k = len(dist.p)
    if not 1 <= m <= k:
        raise ValueError(f"cannot schedule {m} of {k} devices")
    remaining = dist.p.astype(np.float64).copy()
    sequence: List[int] = []
    q_used: List[float] = []
    padded = False
    for _ in range(m):
        mass = remaining.sum()
        if mass <= 0.0:
            padded = True
            eligible = np.ones(k)
            for picked in sequence:
                eligible[picked - 1] = 0.0
            conditional = eligible / eligible.sum()
        else:
            conditional = remaining / mass
        idx = _inverse_cdf_pick(conditional, rng)
        sequence.append(idx + 1)
        q_used.append(float(conditional[idx]))
        remaining[idx] = 0.0
    return ScheduleDecision(
        sequence=sequence,
        conditional_probs=q_used,
        padded_uniform=padded,
        distribution=dist,
    )


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def aggregate_single(
    local_grad: Union[GradientVector, np.ndarray],
    n_selected: int,
    n: int,
    p_selected: float,
) -> GradientVector:
    """Importance-scale one device's gradient: (n_k / (n * p_k)) * g_k."""
    if p_selected <= 0:
        raise ValueError("cannot rescale by a zero selection probability")
    return GradientVector((n_selected / (n * p_selected)) * _as_array(local_grad))


def aggregate_multi(
    decision: ScheduleDecision,
    gradients: Sequence[Union[GradientVector, np.ndarray]],
    n_k: Sequence[int],
    n: int,
) -> GradientVector:
    """Unbiased aggregate of a without-replacement sequence.

    Each pick contributes an unbiased estimate of the full weighted sum:
    the already-selected devices enter with their exact weights n_j * g_j
    and the fresh pick is scaled up by its recorded conditional
    probability. Averaging the M estimates and dividing by n yields an
    estimator whose expectation over sequences is exactly the ground-truth
    global gradient; with M = 1 it reduces to `aggregate_single`. When the
    sequence spans the entire fleet the exact weighted mean is returned
    (the zero-variance unbiased estimator).
    """
    counts = np.asarray(n_k, dtype=np.float64)
    m = len(decision.sequence)
    arrays = []
    for device_id in decision.sequence:
        if device_id < 1 or device_id > len(gradients):
            raise ValueError(f"no gradient supplied for device {device_id}")
        arrays.append(_as_array(gradients[device_id - 1]))
    if m == len(gradients):
        stacked = np.stack([_as_array(g) for g in gradients])
        return GradientVector(counts @ stacked / n)
    dim = arrays[0].shape[0]
    total = np.zeros(dim)
    partial = np.zeros(dim)  # sum of n_j * g_j over earlier picks
    for grad, device_id, q in zip(arrays, decision.sequence, decision.conditional_probs):
        weighted = counts[device_id - 1] * grad
        total += partial + weighted / q
        partial += weighted
    return GradientVector(total / (m * n))


def classical_subset_average(
    selected_ids: Sequence[int],
    gradients: Sequence[Union[GradientVector, np.ndarray]],
    n_k: Sequence[int],
) -> GradientVector:
    """Plain weighted average over a subset: sum n_k g_k / sum n_k.

    This is the aggregation the deterministic channel-aware baseline uses;
    it admits no unbiased rescaling and is biased whenever the subset's
    data is unrepresentative.
    """
    ids = list(selected_ids)
    if not ids:
        raise ValueError("selected set must be nonempty")
    counts = np.asarray(n_k, dtype=np.float64)
    acc = np.zeros_like(_as_array(gradients[ids[0] - 1]))
    weight = 0.0
    for device_id in ids:
        acc += counts[device_id - 1] * _as_array(gradients[device_id - 1])
        weight += counts[device_id - 1]
    return GradientVector(acc / weight)
