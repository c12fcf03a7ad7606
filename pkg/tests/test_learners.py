import numpy as np
import pytest

from feel_sched.learners import (
    Dataset,
    GradientVector,
    LabeledSample,
    LeastSquaresSvm,
    LinearRegression,
    ModelParams,
    MultinomialLogistic,
    ground_truth_global_gradient,
    local_gradient,
    local_loss,
    global_loss,
    sample_loss,
)

from conftest import central_difference_gradient

ALL_KINDS = [
    LinearRegression(),
    LeastSquaresSvm(reg_lambda=0.0),
    LeastSquaresSvm(reg_lambda=0.1),
    MultinomialLogistic(num_classes=3),
]


def random_problem(rng, kind, dim=5, n=8):
    x = rng.standard_normal((n, dim))
    if isinstance(kind, MultinomialLogistic):
        y = rng.integers(0, kind.num_classes, size=n)
        w = rng.standard_normal(kind.num_classes * dim)
    elif isinstance(kind, LeastSquaresSvm):
        y = rng.choice([-1.0, 1.0], size=n)
        w = rng.standard_normal(dim)
    else:
        y = rng.standard_normal(n)
        w = rng.standard_normal(dim)
    return ModelParams(w), Dataset(x, y)


# ---------------------------------------------------------------------------
# sample_loss
# ---------------------------------------------------------------------------

def test_sample_loss_zero_residual():
    loss = sample_loss(
        ModelParams([0.0, 0.0]), LabeledSample([1.0, 1.0], 0.0), LinearRegression()
    )
    assert loss == 0.0


def test_sample_loss_hinge_boundary_inactive():
    loss = sample_loss(
        ModelParams([1.0, 0.0]), LabeledSample([1.0, 0.0], 1.0), LeastSquaresSvm(reg_lambda=0.0)
    )
    assert loss == 0.0


def test_sample_loss_hand_evaluated_regression():
    # 0.5 * (1 - 2*3)^2 = 12.5
    loss = sample_loss(ModelParams([2.0]), LabeledSample([3.0], 1.0), LinearRegression())
    assert loss == pytest.approx(12.5, abs=1e-12)


def test_sample_loss_dimension_mismatch():
    with pytest.raises(ValueError):
        sample_loss(ModelParams([1.0, 2.0]), LabeledSample([1.0], 0.0), LinearRegression())


def test_sample_loss_multinomial_uniform_scores():
    kind = MultinomialLogistic(num_classes=4)
    loss = sample_loss(ModelParams(np.zeros(8)), LabeledSample([1.0, -1.0], 2), kind)
    assert loss == pytest.approx(np.log(4.0), rel=1e-12)


# ---------------------------------------------------------------------------
# local_loss / global_loss
# ---------------------------------------------------------------------------

def test_local_loss_is_mean():
    # with w = 0 the squared-error loss is y^2 / 2: pick labels giving 2 and 4
    ds = Dataset(np.ones((2, 1)), np.array([2.0, np.sqrt(8.0)]))
    assert local_loss(ModelParams([0.0]), ds, LinearRegression()) == pytest.approx(3.0)


def test_local_loss_single_sample():
    sample = LabeledSample([3.0], 1.0)
    single = local_loss(ModelParams([2.0]), [sample], LinearRegression())
    assert single == sample_loss(ModelParams([2.0]), sample, LinearRegression())


def test_local_loss_matches_naive_loop(rng):
    model, ds = random_problem(rng, LinearRegression(), n=3)
    naive = sum(sample_loss(model, ds[i], LinearRegression()) for i in range(3)) / 3
    assert local_loss(model, ds, LinearRegression()) == pytest.approx(naive, rel=1e-12)


def test_local_loss_empty_dataset_rejected():
    with pytest.raises(ValueError):
        local_loss(ModelParams([1.0]), [], LinearRegression())


def test_global_loss_equal_weights():
    # device losses 2 and 4 with one sample each -> 3
    d1 = Dataset(np.ones((1, 1)), np.array([2.0]))
    d2 = Dataset(np.ones((1, 1)), np.array([np.sqrt(8.0)]))
    assert global_loss(ModelParams([0.0]), [d1, d2], LinearRegression()) == pytest.approx(3.0)


def test_global_loss_weighted_mean():
    # n = (1, 3), local losses (4, 0) -> (1*4 + 3*0)/4 = 1
    d1 = Dataset(np.ones((1, 1)), np.array([np.sqrt(8.0)]))
    d2 = Dataset(np.ones((3, 1)), np.zeros(3))
    assert global_loss(ModelParams([0.0]), [d1, d2], LinearRegression()) == pytest.approx(1.0)


def test_global_loss_single_device_equals_local(rng):
    model, ds = random_problem(rng, LinearRegression())
    assert global_loss(model, [ds], LinearRegression()) == pytest.approx(
        local_loss(model, ds, LinearRegression())
    )


@pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: type(k).__name__ + str(getattr(k, "reg_lambda", "")))
def test_losses_nonnegative(rng, kind):
    for _ in range(20):
        model, ds = random_problem(rng, kind)
        assert local_loss(model, ds, kind) >= 0.0


# ---------------------------------------------------------------------------
# local_gradient
# ---------------------------------------------------------------------------

def test_gradient_zero_at_least_squares_optimum(rng):
    x = rng.standard_normal((20, 4))
    y = rng.standard_normal(20)
    w_star, *_ = np.linalg.lstsq(x, y, rcond=None)
    grad = local_gradient(ModelParams(w_star), Dataset(x, y), LinearRegression())
    assert grad.cached_norm < 1e-10


def test_gradient_hinge_inactive_regularizer_only(rng):
    # all margins > 1: scale labels' side so y * w.x is large
    w = rng.standard_normal(4)
    x = rng.standard_normal((10, 4))
    y = np.sign(x @ w)
    x *= 10.0 / np.abs(x @ w)[:, None]  # margins exactly 10
    grad = local_gradient(ModelParams(w), Dataset(x, y), LeastSquaresSvm(reg_lambda=0.1))
    np.testing.assert_allclose(grad.values, 0.1 * w, rtol=1e-12)


@pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: type(k).__name__ + str(getattr(k, "reg_lambda", "")))
def test_gradient_matches_finite_differences(rng, kind):
    checked = 0
    while checked < 25:
        model, ds = random_problem(rng, kind)
        if isinstance(kind, LeastSquaresSvm):
            margins = ds.labels * (ds.features @ model.values)
            if np.any(np.abs(margins - 1.0) < 1e-3):
                continue  # the hinge kink is nondifferentiable; skip its vicinity
        oracle = central_difference_gradient(model, ds, kind)
        grad = local_gradient(model, ds, kind).values
        denom = np.maximum(np.abs(oracle), 1e-6)
        assert np.max(np.abs(grad - oracle) / denom) < 1e-4
        checked += 1


# ---------------------------------------------------------------------------
# ground_truth_global_gradient
# ---------------------------------------------------------------------------

def test_global_gradient_of_identical_locals(rng):
    g = rng.standard_normal(6)
    result = ground_truth_global_gradient([g, g, g], [1, 5, 2])
    np.testing.assert_allclose(result.values, g, rtol=1e-15)


def test_global_gradient_simple_average():
    result = ground_truth_global_gradient([np.array([2.0, 0.0]), np.array([0.0, 2.0])], [1, 1])
    np.testing.assert_allclose(result.values, [1.0, 1.0])


def test_global_gradient_equals_pooled_gradient(rng):
    # oracle: gradient of the pooled dataset
    kind = LinearRegression()
    datasets, grads, sizes = [], [], []
    model = ModelParams(rng.standard_normal(4))
    for _ in range(5):
        n = int(rng.integers(1, 10))
        ds = Dataset(rng.standard_normal((n, 4)), rng.standard_normal(n))
        datasets.append(ds)
        grads.append(local_gradient(model, ds, kind))
        sizes.append(n)
    fleet_grad = ground_truth_global_gradient(grads, sizes).values
    pooled = Dataset(
        np.concatenate([d.features for d in datasets]),
        np.concatenate([d.labels for d in datasets]),
    )
    pooled_grad = local_gradient(model, pooled, kind).values
    np.testing.assert_allclose(fleet_grad, pooled_grad, rtol=1e-10, atol=1e-12)


def test_global_gradient_length_mismatch():
    with pytest.raises(ValueError):
        ground_truth_global_gradient([np.zeros(2), np.zeros(3)], [1, 1])


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

def test_gradient_vector_caches_norm(rng):
    values = rng.standard_normal(8)
    g = GradientVector(values)
    assert g.cached_norm == pytest.approx(np.linalg.norm(values), rel=1e-12)


def test_gradient_vector_rejects_nonfinite():
    with pytest.raises(ValueError):
        GradientVector(np.array([1.0, np.inf]))


def test_model_params_rejects_nonfinite():
    with pytest.raises(ValueError):
        ModelParams(np.array([np.nan]))
