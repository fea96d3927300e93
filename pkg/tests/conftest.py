import numpy as np
import pytest

from collabls.data_gen import synth_covariance
from collabls.model_core import ModelSpec, ViewMask


def random_view(rng, d, proper=False):
    hi = d - 1 if proper else d
    k = int(rng.integers(1, hi + 1))
    return ViewMask(tuple(np.sort(rng.choice(d, size=k, replace=False))), d)


def random_model(rng, d, noise_var=None):
    sigma = synth_covariance(d, int(rng.integers(0, d + 1)), float(rng.uniform(1, 10)), rng)
    sv = float(rng.uniform(0.2, 2.0)) if noise_var is None else noise_var
    return ModelSpec(sigma, rng.standard_normal(d), sv)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def corr2():
    return np.array([[1.0, 0.5], [0.5, 1.0]])
