import numpy as np
import pytest

from feel_sched.learners import Dataset, ModelParams, local_loss


def central_difference_gradient(model, dataset, kind, step=1e-5):
    """Independent gradient oracle: central finite differences of local_loss."""
    w = np.asarray(model.values, dtype=np.float64)
    grad = np.empty_like(w)
    for i in range(w.size):
        bump = np.zeros_like(w)
        bump[i] = step
        hi = local_loss(ModelParams(w + bump), dataset, kind)
        lo = local_loss(ModelParams(w - bump), dataset, kind)
        grad[i] = (hi - lo) / (2.0 * step)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
