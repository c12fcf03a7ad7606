"""Experiment configuration: schema, file loading, overrides, and builders.

The on-disk format is a nested key/value file — YAML by default, JSON as an
alternative encoding of the same schema. A config round-trips exactly
through `to_dict` / `from_dict`, and `config_hash` fingerprints the
resolved dictionary for the run summary.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import yaml

from .channel import ChannelConfig, DeviceProfile, place_devices
from .data import (
    BinaryMarginTask,
    FleetDatasets,
    PartitionSpec,
    RegressionTask,
    generate_synthetic,
    load_idx,
    partition,
)
from .latency import PayloadSpec
from .learners import Dataset, LeastSquaresSvm, LinearRegression, MultinomialLogistic
from .scheduler import SchedulerConfig
from .trainer import ConstantLr, DiminishingLr, ExperimentBundle, TrainerConfig

__all__ = [
    "ConfigError",
    "FleetSection",
    "DataSection",
    "ExperimentConfig",
    "load_config",
    "apply_overrides",
    "config_hash",
    "build_bundle",
    "default_config_dict",
]


class ConfigError(ValueError):
    """Problem in an experiment configuration file or override."""


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

@dataclass
class FleetSection:
    devices: int = 30
    samples_per_device: Union[int, List[int]] = 100
    compute_flops: Union[float, List[float]] = 1e9
    device_tx_power_dbm: float = 24.0
    placement_seed: int = 7


@dataclass
class DataSection:
    task: str = "binary_margin"      # regression | binary_margin | idx
    dim: int = 12
    separation: float = 1.5          # binary_margin
    noise_sd: float = 0.5            # regression
    true_w_seed: int = 1             # regression
    reg_lambda: float = 0.01         # binary_margin -> hinge learner ridge
    images_path: Optional[str] = None   # idx
    labels_path: Optional[str] = None   # idx
    subsample_n: Optional[int] = None   # idx
    num_classes: int = 10               # idx
    partition: str = "two_class_split"  # iid_uniform | label_sorted_shards | two_class_split
    shards_per_device: int = 2
    test_fraction: float = 0.2
    seed: int = 11


@dataclass
class PayloadSection:
    bits_per_element: int = 16
    flops_per_sample: float = 200.0
    parameter_count: Optional[int] = None   # default: learner parameter count


@dataclass
class OutputSection:
    dir: str = "runs"
    write_distribution: bool = False


@dataclass
class LrSection:
    kind: str = "constant"   # constant | diminishing
    eta: float = 0.05
    chi: float = 1.0
    nu: float = 1.0

    def build(self):
        if self.kind == "constant":
            return ConstantLr(self.eta)
        if self.kind == "diminishing":
            return DiminishingLr(self.chi, self.nu)
        raise ConfigError(f"trainer.lr.kind must be constant or diminishing, got {self.kind!r}")


@dataclass
class TrainerSection:
    rounds: int = 300
    lr: LrSection = field(default_factory=LrSection)
    target_accuracy: Optional[float] = None
    eval_every: int = 1


@dataclass
class SchedulerSection:
    policy: str = "importance_channel"
    devices_per_round: int = 1
    rho: Union[float, str] = 0.5
    lambda_tolerance: float = 1e-10
    compute_max_over: str = "fleet"


@dataclass
class ChannelSection:
    bandwidth_hz: float = 1e6
    noise_dbm_per_hz: float = -174.0
    server_tx_power_dbm: float = 46.0
    fading: str = "rayleigh_block"
    pathloss_intercept_db: float = 128.1
    pathloss_slope_db_per_decade: float = 37.6
    cell_radius_km: float = 0.5
    min_distance_km: float = 0.01
    snr_mode: str = "fixed"


@dataclass
class ExperimentConfig:
    fleet: FleetSection = field(default_factory=FleetSection)
    data: DataSection = field(default_factory=DataSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    payload: PayloadSection = field(default_factory=PayloadSection)
    scheduler: SchedulerSection = field(default_factory=SchedulerSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    output: OutputSection = field(default_factory=OutputSection)
    seeds: List[int] = field(default_factory=lambda: [1])

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "ExperimentConfig":
        def section(section_cls, payload, where):
            if payload is None:
                return section_cls()
            if not isinstance(payload, dict):
                raise ConfigError(f"{where}: expected a mapping, got {type(payload).__name__}")
            allowed = {f.name for f in dataclasses.fields(section_cls)}
            unknown = set(payload) - allowed
            if unknown:
                raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
            return section_cls(**payload)

        raw = dict(raw or {})
        unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
        trainer_raw = dict(raw.get("trainer") or {})
        lr = section(LrSection, trainer_raw.pop("lr", None), "trainer.lr")
        trainer = section(TrainerSection, trainer_raw, "trainer")
        trainer.lr = lr
        cfg = cls(
            fleet=section(FleetSection, raw.get("fleet"), "fleet"),
            data=section(DataSection, raw.get("data"), "data"),
            channel=section(ChannelSection, raw.get("channel"), "channel"),
            payload=section(PayloadSection, raw.get("payload"), "payload"),
            scheduler=section(SchedulerSection, raw.get("scheduler"), "scheduler"),
            trainer=trainer,
            output=section(OutputSection, raw.get("output"), "output"),
            seeds=list(raw.get("seeds", [1])),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.fleet.devices < 1:
            raise ConfigError("fleet.devices must be >= 1")
        if isinstance(self.fleet.samples_per_device, list):
            if len(self.fleet.samples_per_device) != self.fleet.devices:
                raise ConfigError("fleet.samples_per_device list must have one entry per device")
            if any(s < 1 for s in self.fleet.samples_per_device):
                raise ConfigError("per-device sample counts must be positive")
        elif self.fleet.samples_per_device < 1:
            raise ConfigError("fleet.samples_per_device must be >= 1")
        if self.data.task not in ("regression", "binary_margin", "idx"):
            raise ConfigError(f"data.task must be regression|binary_margin|idx, got {self.data.task!r}")
        if self.data.task == "idx":
            for key in ("images_path", "labels_path"):
                path = getattr(self.data, key)
                if path is None:
                    raise ConfigError(f"data.{key} is required for the idx task")
                if not Path(path).exists():
                    raise ConfigError(f"data.{key}: no such file {path!r}")
        if not 0.0 <= self.data.test_fraction < 1.0:
            raise ConfigError("data.test_fraction must lie in [0, 1)")
        if not self.seeds:
            raise ConfigError("seeds must be a nonempty list")
        # Instantiating the runtime configs triggers their own validation.
        try:
            self.scheduler_config()
            self.channel_config()
            self.trainer_config()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def scheduler_config(self) -> SchedulerConfig:
        s = self.scheduler
        rho = s.rho if s.rho == "auto" else float(s.rho)
        return SchedulerConfig(
            policy=s.policy,
            devices_per_round=s.devices_per_round,
            rho=rho,
            lambda_tolerance=s.lambda_tolerance,
            compute_max_over=s.compute_max_over,
            record_distribution=self.output.write_distribution,
        )

    def channel_config(self) -> ChannelConfig:
        c = self.channel
        return ChannelConfig(
            bandwidth_hz=c.bandwidth_hz,
            noise_dbm_per_hz=c.noise_dbm_per_hz,
            server_tx_power_dbm=c.server_tx_power_dbm,
            fading=c.fading,
            pathloss_intercept_db=c.pathloss_intercept_db,
            pathloss_slope_db_per_decade=c.pathloss_slope_db_per_decade,
            cell_radius_km=c.cell_radius_km,
            min_distance_km=c.min_distance_km,
            snr_mode=c.snr_mode,
        )

    def trainer_config(self) -> TrainerConfig:
        t = self.trainer
        return TrainerConfig(
            rounds=t.rounds,
            lr_schedule=t.lr.build(),
            target_accuracy=t.target_accuracy,
            eval_every=t.eval_every,
        )


# ---------------------------------------------------------------------------
# Loading, overrides, hashing
# ---------------------------------------------------------------------------

def load_config(path: Union[str, Path], overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Load a YAML or JSON experiment file and apply --set overrides."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            raw = json.loads(text)
        else:
            raw = yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    raw = apply_overrides(raw, overrides)
    return ExperimentConfig.from_dict(raw)


def _parse_scalar(text: str) -> Any:
    value = yaml.safe_load(text)
    if isinstance(value, str):
        # YAML leaves exponent forms like 5e-6 as strings; accept them
        try:
            return float(value)
        except ValueError:
            return value
    return value


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply dotted KEY=VALUE overrides; values parse as YAML scalars."""
    raw = json.loads(json.dumps(raw))  # deep copy, plain types only
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, _, value = item.partition("=")
        node = raw
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends through a non-mapping")
        node[parts[-1]] = _parse_scalar(value)
    return raw


def config_hash(raw: Dict[str, Any]) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def default_config_dict() -> Dict[str, Any]:
    return ExperimentConfig().to_dict()


def default_config_path() -> Path:
    """Shipped experiment file: the desk-scale policy-comparison setup."""
    return Path(__file__).parent / "configs" / "default.yaml"


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def _fleet_sizes(cfg: ExperimentConfig) -> List[int]:
    spd = cfg.fleet.samples_per_device
    if isinstance(spd, list):
        return [int(s) for s in spd]
    return [int(spd)] * cfg.fleet.devices


def _build_task_data(cfg: ExperimentConfig):
    """Returns (fleet_datasets, test_set, learner_kind)."""
    d = cfg.data
    sizes = _fleet_sizes(cfg)
    total = sum(sizes)
    k = cfg.fleet.devices

    if d.task == "idx":
        subsample = d.subsample_n or total
        pool = load_idx(d.images_path, d.labels_path, subsample, d.seed)
        test_n = int(round(len(pool) * d.test_fraction))
        rng = np.random.default_rng(np.random.SeedSequence([d.seed, 3]))
        order = rng.permutation(len(pool))
        test = pool.subset(np.sort(order[:test_n])) if test_n else None
        train = pool.subset(np.sort(order[test_n:]))
        kind = MultinomialLogistic(num_classes=d.num_classes)
    else:
        if d.task == "regression":
            task = RegressionTask(d.dim, d.noise_sd, d.true_w_seed)
            kind = LinearRegression()
        else:
            task = BinaryMarginTask(d.dim, d.separation, direction_seed=d.true_w_seed)
            kind = LeastSquaresSvm(reg_lambda=d.reg_lambda)
        train = generate_synthetic(task, total, d.seed)
        test_n = int(round(total * d.test_fraction))
        test = (
            generate_synthetic(task, test_n, int(np.random.SeedSequence([d.seed, 3]).generate_state(1)[0]))
            if test_n
            else None
        )

    spec = PartitionSpec(scheme=d.partition, seed=d.seed + 1, shards_per_device=d.shards_per_device)
    if isinstance(cfg.fleet.samples_per_device, list):
        if d.partition == "iid_uniform":
            fleet = _sized_partition(train, sizes, d.seed + 1)
        elif d.partition == "two_class_split":
            fleet = _sized_two_class_partition(train, sizes, d.seed + 1)
        else:
            raise ConfigError(
                "explicit per-device sizes support the iid_uniform and two_class_split partitions"
            )
    else:
        fleet = partition(train, k, spec)
    return fleet, test, kind


def _sized_partition(train: Dataset, sizes: List[int], seed: int) -> FleetDatasets:
    if sum(sizes) != len(train):
        raise ConfigError(f"per-device sizes sum to {sum(sizes)} but pool has {len(train)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(train))
    per_device, start = [], 0
    for idx, size in enumerate(sizes):
        chunk = np.sort(order[start:start + size])
        per_device.append((idx + 1, train.subset(chunk)))
        start += size
    return FleetDatasets(per_device)


def _sized_two_class_partition(train: Dataset, sizes: List[int], seed: int) -> FleetDatasets:
    """One class per device with explicit sizes: device k serves class
    (k-1) mod n_classes and draws its quota from that class's pool."""
    labels = np.asarray(train.labels)
    classes = np.unique(labels)
    rng = np.random.default_rng(seed)
    pools = {
        pos: np.flatnonzero(labels == label)[rng.permutation(int((labels == label).sum()))]
        for pos, label in enumerate(classes)
    }
    cursors = {pos: 0 for pos in pools}
    per_device = []
    for idx, size in enumerate(sizes):
        pos = idx % len(classes)
        start = cursors[pos]
        if start + size > len(pools[pos]):
            raise ConfigError(
                f"class {classes[pos]!r} has too few samples for the requested device sizes"
            )
        chunk = np.sort(pools[pos][start:start + size])
        per_device.append((idx + 1, train.subset(chunk)))
        cursors[pos] = start + size
    leftovers = sum(len(pools[pos]) - cursors[pos] for pos in pools)
    if leftovers:
        raise ConfigError(f"per-device sizes leave {leftovers} samples unassigned")
    return FleetDatasets(per_device)


def _learner_parameter_count(kind, dim: int) -> int:
    if isinstance(kind, MultinomialLogistic):
        return kind.num_classes * dim
    return dim


def build_bundle(cfg: ExperimentConfig) -> ExperimentBundle:
    """Materialize data, placement, and runtime configs for the trainer.

    Everything here is seed-independent across runs: per-run randomness
    (fading, scheduling draws) is injected by `trainer.run_experiment`.
    """
    fleet, test, kind = _build_task_data(cfg)
    channel_cfg = cfg.channel_config()
    distances = place_devices(cfg.fleet.devices, channel_cfg, cfg.fleet.placement_seed)
    flops = cfg.fleet.compute_flops
    flop_list = flops if isinstance(flops, list) else [flops] * cfg.fleet.devices
    if len(flop_list) != cfg.fleet.devices:
        raise ConfigError("fleet.compute_flops list must have one entry per device")
    profiles = [
        DeviceProfile(
            device_id=i + 1,
            n_k=fleet.n_k[i],
            f_k=float(flop_list[i]),
            distance_km=float(distances[i]),
            tx_power_dbm=cfg.fleet.device_tx_power_dbm,
        )
        for i in range(cfg.fleet.devices)
    ]
    param_count = cfg.payload.parameter_count or _learner_parameter_count(kind, fleet.datasets[0].dim)
    payload = PayloadSpec(
        parameter_count=param_count,
        bits_per_element=cfg.payload.bits_per_element,
        flops_per_sample=cfg.payload.flops_per_sample,
    )
    return ExperimentBundle(
        fleet=fleet,
        profiles=profiles,
        kind=kind,
        test_set=test,
        channel=channel_cfg,
        payload=payload,
        scheduler=cfg.scheduler_config(),
        trainer=cfg.trainer_config(),
    )
