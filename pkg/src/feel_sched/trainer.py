"""Drives the six-step communication round and the simulated clock.

One round: broadcast the model, let every device compute its local
gradient and report (n_k * |g_k|, SNR), solve the scheduling distribution,
select devices, allocate bandwidth, upload, aggregate, and apply the
gradient step. The clock advances by broadcast + fleet-max compute +
upload time; model evaluation happens outside simulated time.

Selected devices always finish their round (no dropout model).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from . import latency as latency_mod
from . import scheduler as sched_mod
from .channel import ChannelConfig, DeviceProfile, draw_snapshot
from .data import FleetDatasets
from .latency import PayloadSpec
from .learners import (
    Dataset,
    LearnerKind,
    LeastSquaresSvm,
    LinearRegression,
    ModelParams,
    MultinomialLogistic,
    ground_truth_global_gradient,
    local_gradient,
    local_loss,
)
from .scheduler import SchedulerConfig

__all__ = [
    "ConstantLr",
    "DiminishingLr",
    "TrainerConfig",
    "RoundReport",
    "ExperimentBundle",
    "TrainerState",
    "run_round",
    "run_experiment",
    "evaluate_accuracy",
]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantLr:
    eta: float

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("learning rate must be nonnegative")

    def at(self, round_index: int) -> float:
        return self.eta


@dataclass(frozen=True)
class DiminishingLr:
    """eta_t = chi / (t + nu)."""

    chi: float
    nu: float

    def __post_init__(self):
        if self.chi <= 0 or self.nu <= 0:
            raise ValueError("diminishing schedule needs chi > 0 and nu > 0")

    def at(self, round_index: int) -> float:
        return self.chi / (round_index + self.nu)


LrSchedule = Union[ConstantLr, DiminishingLr]


@dataclass
class TrainerConfig:
    rounds: int = 200
    lr_schedule: LrSchedule = field(default_factory=lambda: ConstantLr(0.05))
    target_accuracy: Optional[float] = None
    eval_every: int = 1

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("need at least one round")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class RoundReport:
    """Everything observed in one communication round."""

    round_index: int
    scheduled_ids: List[int]
    lambda_star: Optional[float]
    broadcast_s: float
    max_compute_s: float
    upload_s: float
    round_s: float
    cumulative_s: float
    global_loss: float
    accuracy: Optional[float]
    grad_norm_min: float
    grad_norm_mean: float
    grad_norm_max: float
    aggregate_norm: float
    distribution: Optional[List[float]] = None


@dataclass
class ExperimentBundle:
    """Built, self-consistent inputs for one experiment (all seeds)."""

    fleet: FleetDatasets
    profiles: List[DeviceProfile]
    kind: LearnerKind
    test_set: Optional[Dataset]
    channel: ChannelConfig
    payload: PayloadSpec
    scheduler: SchedulerConfig
    trainer: TrainerConfig
    initial_model: Optional[np.ndarray] = None
    _pooled: Optional[Dataset] = dataclasses.field(default=None, init=False, repr=False)

    @property
    def pooled_train(self) -> Dataset:
        if self._pooled is None:
            self._pooled = self.fleet.pooled()
        return self._pooled


@dataclass
class TrainerState:
    model: ModelParams
    cumulative_s: float = 0.0
    resolved_rho: Optional[float] = None
    rng: Optional[np.random.Generator] = None


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate_accuracy(model: ModelParams, test_set: Dataset, kind: LearnerKind) -> Optional[float]:
    """Classification accuracy on the held-out split; None for regression."""
    if isinstance(kind, LinearRegression):
        return None
    x = test_set.features
    if isinstance(kind, LeastSquaresSvm):
        predicted = np.where(x @ model.values >= 0, 1.0, -1.0)
        return float(np.mean(predicted == test_set.labels.astype(np.float64)))
    if isinstance(kind, MultinomialLogistic):
        weights = model.values.reshape(kind.num_classes, test_set.dim)
        predicted = np.argmax(x @ weights.T, axis=1)
        return float(np.mean(predicted == test_set.labels.astype(int)))
    raise TypeError(f"unsupported learner kind: {kind!r}")


def _resolve_rho(state, bundle, norms, grads, global_grad, upload_lats, breakdown_probe):
    """First-round auto tuning: match the order of magnitude of the two
    objective terms, probed at the uniform distribution."""
    cfg = bundle.scheduler
    if cfg.rho != "auto":
        return float(cfg.rho)
    if state.resolved_rho is not None:
        return state.resolved_rho
    k = len(norms)
    n = bundle.fleet.n
    n_k = bundle.fleet.n_k
    indicators = [
        sched_mod.importance_indicator(g, n_k[i], n, 1.0 / k, global_grad)
        for i, g in enumerate(grads)
    ]
    round_lats = breakdown_probe.broadcast_s + breakdown_probe.max_compute_s + upload_lats
    state.resolved_rho = sched_mod.auto_rho(indicators, round_lats)
    return state.resolved_rho


# ---------------------------------------------------------------------------
# Round protocol
# ---------------------------------------------------------------------------

def run_round(state: TrainerState, bundle: ExperimentBundle, round_index: int) -> RoundReport:
    fleet, profiles = bundle.fleet, bundle.profiles
    cfg = bundle.scheduler
    n_k = fleet.n_k
    n = fleet.n
    m = cfg.devices_per_round

    # Steps 1-3: broadcast, local gradients, importance reports.
    snapshot = draw_snapshot(profiles, bundle.channel, round_index)
    grads = [local_gradient(state.model, ds, bundle.kind) for ds in fleet.datasets]
    norms = np.array([g.cached_norm for g in grads])
    global_grad = ground_truth_global_gradient(grads, n_k)
    upload_lats = latency_mod.full_band_upload_latencies(bundle.payload, bundle.channel, snapshot)

    # Step 4: solve the distribution and select devices.
    lambda_star = None
    decision = None
    if cfg.policy == "channel_aware":
        order = np.argsort(upload_lats, kind="stable")
        scheduled = [int(i) + 1 for i in order[:m]]
        dist = None
    else:
        if cfg.policy == "importance_channel":
            if cfg.rho == "auto" and state.resolved_rho is None:
                probe = latency_mod.round_latency(
                    [1], bundle.payload, bundle.channel, snapshot, profiles, cfg.compute_max_over
                )
                rho = _resolve_rho(state, bundle, norms, grads, global_grad, upload_lats, probe)
            elif cfg.rho == "auto":
                rho = state.resolved_rho
            else:
                rho = float(cfg.rho)
            dist = sched_mod.solve_optimal_distribution(
                n_k, norms, upload_lats, rho, cfg.lambda_tolerance
            )
            lambda_star = dist.lambda_star
        else:
            dist = sched_mod.baseline_distribution(cfg.policy, n_k, norms, upload_lats)
        decision = sched_mod.sample_without_replacement(dist, m, state.rng)
        scheduled = decision.sequence

    # Step 5: bandwidth allocation and upload.
    breakdown = latency_mod.round_latency(
        scheduled, bundle.payload, bundle.channel, snapshot, profiles, cfg.compute_max_over
    )
    upload_term = max(breakdown.upload_s.values())

    # Step 6: aggregate and update.
    if cfg.policy == "channel_aware":
        aggregate = sched_mod.classical_subset_average(scheduled, grads, n_k)
    elif m == 1:
        picked = scheduled[0]
        aggregate = sched_mod.aggregate_single(
            grads[picked - 1], n_k[picked - 1], n, decision.conditional_probs[0]
        )
    else:
        aggregate = sched_mod.aggregate_multi(decision, grads, n_k, n)

    eta = bundle.trainer.lr_schedule.at(round_index)
    state.model = ModelParams(state.model.values - eta * aggregate.values)
    state.cumulative_s += breakdown.round_total_s

    evaluate = round_index % bundle.trainer.eval_every == 0
    accuracy = (
        evaluate_accuracy(state.model, bundle.test_set, bundle.kind)
        if (evaluate and bundle.test_set is not None)
        else None
    )
    # global loss == pooled mean loss by linearity; one batched evaluation
    loss = local_loss(state.model, bundle.pooled_train, bundle.kind)

    return RoundReport(
        round_index=round_index,
        scheduled_ids=scheduled,
        lambda_star=lambda_star,
        broadcast_s=breakdown.broadcast_s,
        max_compute_s=breakdown.max_compute_s,
        upload_s=upload_term,
        round_s=breakdown.round_total_s,
        cumulative_s=state.cumulative_s,
        global_loss=loss,
        accuracy=accuracy,
        grad_norm_min=float(norms.min()),
        grad_norm_mean=float(norms.mean()),
        grad_norm_max=float(norms.max()),
        aggregate_norm=aggregate.cached_norm,
        distribution=(None if (dist is None or not cfg.record_distribution) else dist.p.tolist()),
    )


def run_experiment(bundle: ExperimentBundle, seed: int) -> List[RoundReport]:
    """Run all rounds for one seed; deterministic given (bundle, seed).

    The seed drives the per-round fading and the scheduling draws; data,
    placement, and the initial model come from the bundle and are shared
    across seeds.
    """
    channel_seed = int(np.random.SeedSequence([seed, 11]).generate_state(1)[0])
    bundle = dataclasses.replace(bundle, channel=dataclasses.replace(bundle.channel, seed=channel_seed))

    if bundle.initial_model is not None:
        w0 = np.asarray(bundle.initial_model, dtype=np.float64)
    else:
        w0 = np.zeros(_model_size(bundle))
    state = TrainerState(
        model=ModelParams(w0),
        rng=np.random.default_rng(np.random.SeedSequence([seed, 23])),
    )

    reports: List[RoundReport] = []
    target = bundle.trainer.target_accuracy
    streak = 0
    for t in range(1, bundle.trainer.rounds + 1):
        report = run_round(state, bundle, t)
        reports.append(report)
        if target is not None and report.accuracy is not None:
            streak = streak + 1 if report.accuracy >= target else 0
            if streak >= bundle.trainer.eval_every:
                break
    return reports


def _model_size(bundle: ExperimentBundle) -> int:
    dim = bundle.fleet.datasets[0].dim
    if isinstance(bundle.kind, MultinomialLogistic):
        return bundle.kind.num_classes * dim
    return dim
