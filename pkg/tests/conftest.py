import numpy as np
import pytest

from lppg.hankel_ops import HankelShape
from lppg.signals import add_noise, generate_signal, observe, sample_uniform, trial_rng


def make_instance(dims, r, Sp, seed, eta=0.0, damped=False, splits=None):
    """Seeded (truth, data, shape) triple."""
    rng = trial_rng(seed, 0, 7)
    x, _ = generate_signal(dims, r, damped=damped, rng=rng)
    data = observe(x, sample_uniform(x.size, Sp, rng))
    if eta:
        data = add_noise(data, eta, rng)
    return x, data, HankelShape.from_dims(dims, splits)


@pytest.fixture
def instance():
    return make_instance


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
