import numpy as np
import pytest

from jndattack import classifier as clf
from jndattack.data_io import generate_synthetic


def central_diff(f, x, index, h=1e-5):
    """Central finite difference of scalar f at one coordinate of array x."""
    xp = x.copy()
    xp[index] += h
    xm = x.copy()
    xm[index] -= h
    return (f(xp) - f(xm)) / (2.0 * h)


def max_rel_error(analytic, numeric):
    """Worst |a - n| relative to the largest gradient magnitude involved."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture(scope="session")
def tiny_model():
    """A small random-weight model on 12x12x3 inputs, deterministic."""
    spec = clf.ModelSpec((12, 12, 3), 4, (
        clf.conv(4, 3), clf.relu(), clf.pool(),
        clf.flatten(), clf.dense(4), clf.softmax(),
    ))
    return clf.Model(spec, clf.init_parameters(spec, seed=11))


@pytest.fixture(scope="session")
def trained_desk():
    """Desk model trained on a small synthetic set; shared across tests."""
    dataset = generate_synthetic(4, 60, seed=7)
    spec = clf.desk_model_spec((32, 32, 3), 4)
    model = clf.Model(spec, clf.init_parameters(spec, seed=1))
    params, log = clf.train(
        model, dataset,
        clf.TrainSchedule(epochs=6, batch_size=32, learning_rate=2e-4, seed=5))
    trained = clf.Model(spec, params)
    params, _ = clf.temperature_scale(trained, dataset.images, dataset.labels, 8.0)
    return clf.Model(spec, params), dataset
