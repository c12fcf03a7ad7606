"""Loss functions, local/global loss evaluation, and exact gradients.

Three model families are supported:

* linear regression with squared error,
* least-squares SVM: half the plain (non-squared) hinge plus an L2 ridge
  penalty,
* multinomial logistic regression (softmax cross-entropy) — an extension
  used as the desk-scale stand-in for deep models; it is the only
  non-convex-adjacent learner here and carries no convexity guarantees.

All arithmetic is float64 and every operation is a pure function of its
inputs, so everything in this module is safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

__all__ = [
    "ModelParams",
    "GradientVector",
    "LabeledSample",
    "Dataset",
    "LinearRegression",
    "LeastSquaresSvm",
    "MultinomialLogistic",
    "LearnerKind",
    "sample_loss",
    "local_loss",
    "global_loss",
    "local_gradient",
    "ground_truth_global_gradient",
]


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class ModelParams:
    """Flat parameter vector of a learner (length fixed per task)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("model parameters must be a 1-D vector")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("model parameters must be finite")

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass
class GradientVector:
    """Dense gradient with its L2 norm cached at construction time."""

    values: np.ndarray
    cached_norm: float = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("gradient must be a 1-D vector")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("gradient entries must be finite")
        self.cached_norm = float(np.linalg.norm(self.values))

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass
class LabeledSample:
    """One training example: a feature vector and its label."""

    features: np.ndarray
    label: Union[float, int]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)


class Dataset:
    """Column-stacked view of a sample list (features: n x d, labels: n).

    Behaves like a sequence of :class:`LabeledSample` but keeps the batch
    as contiguous arrays so losses and gradients vectorise.
    """

    __slots__ = ("features", "labels")

    def __init__(self, features: np.ndarray, labels: np.ndarray):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels)
        if features.ndim != 2:
            raise ValueError("features must be a 2-D array (n x d)")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels length must match feature rows")
        self.features = features
        self.labels = labels

    @classmethod
    def from_samples(cls, samples: Iterable[LabeledSample]) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise ValueError("cannot build a dataset from zero samples")
        feats = np.stack([np.asarray(s.features, dtype=np.float64) for s in samples])
        labels = np.asarray([s.label for s in samples])
        return cls(feats, labels)

    @classmethod
    def coerce(cls, data: "DatasetLike") -> "Dataset":
        if isinstance(data, Dataset):
            return data
        return cls.from_samples(data)

    def subset(self, indices) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices])

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(self.features[i], self.labels[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


DatasetLike = Union[Dataset, Sequence[LabeledSample]]


# ---------------------------------------------------------------------------
# Learner kinds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearRegression:
    """loss(w, x, y) = 0.5 * (y - w.x)^2"""


@dataclass(frozen=True)
class LeastSquaresSvm:
    """loss(w, x, y) = 0.5 * max(0, 1 - y * w.x) + 0.5 * reg_lambda * |w|^2

    The hinge is the plain (non-squared) one. At a margin of exactly 1 the
    hinge subgradient is taken as 0.
    """

    reg_lambda: float = 0.0


@dataclass(frozen=True)
class MultinomialLogistic:
    """Softmax cross-entropy over `num_classes`; w is the flattened
    (num_classes x dim) weight matrix, labels are class indices."""

    num_classes: int


LearnerKind = Union[LinearRegression, LeastSquaresSvm, MultinomialLogistic]


def _check_dim(model: ModelParams, feature_dim: int, kind: LearnerKind) -> None:
    if isinstance(kind, MultinomialLogistic):
        expected = kind.num_classes * feature_dim
    else:
        expected = feature_dim
    if model.size != expected:
        raise ValueError(
            f"model has {model.size} parameters but the task needs {expected} "
            f"(feature dim {feature_dim}, kind {type(kind).__name__})"
        )


def _logistic_matrix(model: ModelParams, kind: MultinomialLogistic, dim: int) -> np.ndarray:
    return model.values.reshape(kind.num_classes, dim)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def sample_loss(model: ModelParams, sample: LabeledSample, kind: LearnerKind) -> float:
    """Per-sample loss of `model` on one labeled example."""
    x = np.asarray(sample.features, dtype=np.float64)
    _check_dim(model, x.shape[0], kind)
    if isinstance(kind, LinearRegression):
        residual = float(sample.label) - float(model.values @ x)
        return 0.5 * residual * residual
    if isinstance(kind, LeastSquaresSvm):
        margin = float(sample.label) * float(model.values @ x)
        hinge = max(0.0, 1.0 - margin)
        return 0.5 * hinge + 0.5 * kind.reg_lambda * float(model.values @ model.values)
    if isinstance(kind, MultinomialLogistic):
        weights = _logistic_matrix(model, kind, x.shape[0])
        scores = weights @ x
        scores -= scores.max()
        log_norm = np.log(np.exp(scores).sum())
        return float(log_norm - scores[int(sample.label)])
    raise TypeError(f"unsupported learner kind: {kind!r}")


def local_loss(model: ModelParams, dataset: DatasetLike, kind: LearnerKind) -> float:
    """Mean per-sample loss over one device's dataset."""
    ds = Dataset.coerce(dataset)
    if len(ds) == 0:
        raise ValueError("local_loss needs a nonempty dataset")
    _check_dim(model, ds.dim, kind)
    x, y = ds.features, ds.labels
    if isinstance(kind, LinearRegression):
        residual = y.astype(np.float64) - x @ model.values
        return float(0.5 * np.mean(residual * residual))
    if isinstance(kind, LeastSquaresSvm):
        margins = y.astype(np.float64) * (x @ model.values)
        hinge = np.maximum(0.0, 1.0 - margins)
        reg = 0.5 * kind.reg_lambda * float(model.values @ model.values)
        return float(0.5 * np.mean(hinge) + reg)
    if isinstance(kind, MultinomialLogistic):
        weights = _logistic_matrix(model, kind, ds.dim)
        scores = x @ weights.T
        scores -= scores.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(scores).sum(axis=1))
        picked = scores[np.arange(len(ds)), y.astype(int)]
        return float(np.mean(log_norm - picked))
    raise TypeError(f"unsupported learner kind: {kind!r}")


def global_loss(model: ModelParams, fleet_datasets, kind: LearnerKind) -> float:
    """Sample-count weighted mean of the local losses across the fleet.

    Accepts either a sequence of datasets or any object exposing a
    `datasets` attribute (such as `data.FleetDatasets`).
    """
    datasets = list(getattr(fleet_datasets, "datasets", fleet_datasets))
    sizes = [len(Dataset.coerce(d)) for d in datasets]
    total = sum(sizes)
    if total == 0:
        raise ValueError("global_loss needs at least one nonempty dataset")
    acc = 0.0
    for d, n_k in zip(datasets, sizes):
        if n_k == 0:
            continue
        acc += n_k * local_loss(model, d, kind)
    return acc / total


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

def local_gradient(model: ModelParams, dataset: DatasetLike, kind: LearnerKind) -> GradientVector:
    """Exact analytic gradient of `local_loss` at `model`.

    For the least-squares SVM the hinge contributes nothing at a margin of
    exactly 1 (subgradient 0 at the kink).
    """
    ds = Dataset.coerce(dataset)
    if len(ds) == 0:
        raise ValueError("local_gradient needs a nonempty dataset")
    _check_dim(model, ds.dim, kind)
    x, y = ds.features, ds.labels
    n = len(ds)
    if isinstance(kind, LinearRegression):
        residual = x @ model.values - y.astype(np.float64)
        return GradientVector(x.T @ residual / n)
    if isinstance(kind, LeastSquaresSvm):
        yf = y.astype(np.float64)
        margins = yf * (x @ model.values)
        active = margins < 1.0  # strict: the kink itself contributes 0
        grad = -0.5 * (x.T @ (yf * active)) / n + kind.reg_lambda * model.values
        return GradientVector(grad)
    if isinstance(kind, MultinomialLogistic):
        weights = _logistic_matrix(model, kind, ds.dim)
        scores = x @ weights.T
        scores -= scores.max(axis=1, keepdims=True)
        probs = np.exp(scores)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(n), y.astype(int)] -= 1.0
        return GradientVector((probs.T @ x / n).reshape(-1))
    raise TypeError(f"unsupported learner kind: {kind!r}")


def ground_truth_global_gradient(
    gradients: Sequence[Union[GradientVector, np.ndarray]],
    n_k: Sequence[int],
) -> GradientVector:
    """Sample-count weighted mean (1/n) * sum_k n_k * g_k of local gradients."""
    if len(gradients) == 0 or len(gradients) != len(n_k):
        raise ValueError("need one local gradient per device")
    arrays = [g.values if isinstance(g, GradientVector) else np.asarray(g, dtype=np.float64)
              for g in gradients]
    size = arrays[0].shape[0]
    if any(a.shape != (size,) for a in arrays):
        raise ValueError("local gradients must all have the same length")
    counts = np.asarray(n_k, dtype=np.float64)
    if np.any(counts <= 0):
        raise ValueError("device sample counts must be positive")
    stacked = np.stack(arrays)
    return GradientVector(counts @ stacked / counts.sum())
