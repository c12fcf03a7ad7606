"""Seedable simulator for importance- and channel-aware device scheduling
in cellular federated edge learning."""

from .channel import ChannelConfig, ChannelSnapshot, DeviceProfile
from .data import FleetDatasets, PartitionSpec
from .latency import LatencyBreakdown, PayloadSpec
from .learners import (
    Dataset,
    GradientVector,
    LabeledSample,
    LeastSquaresSvm,
    LinearRegression,
    ModelParams,
    MultinomialLogistic,
)
from .scheduler import ScheduleDecision, SchedulerConfig, SchedulingDistribution
from .trainer import ExperimentBundle, RoundReport, TrainerConfig, run_experiment

__version__ = "0.1.0"
