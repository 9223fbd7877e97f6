import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lppg.signals import (
    ObservedData,
    SampleMask,
    SpectralComponents,
    add_noise,
    generate_signal,
    nmse,
    observe,
    sample_uniform,
    synthesize,
    trial_rng,
)


def test_constant_exponential():
    comp = SpectralComponents([1.0], [[0.0]], [[0.0]])
    np.testing.assert_allclose(synthesize(comp, (4,)), np.ones(4))


def test_quarter_cycle():
    comp = SpectralComponents([1.0], [[0.25]], [[0.0]])
    np.testing.assert_allclose(synthesize(comp, (4,)), [1, 1j, -1, -1j], atol=1e-15)


def test_2d_outer_product_and_order():
    comp = SpectralComponents([2.0], [[0.1, 0.3]], [[0.0, 0.05]])
    x = synthesize(comp, (4, 3)).reshape(4, 3, order="F")
    t1, t2 = np.arange(4), np.arange(3)
    ref = 2 * np.outer(np.exp(2j * np.pi * 0.1 * t1), np.exp((2j * np.pi * 0.3 - 0.05) * t2))
    np.testing.assert_allclose(x, ref)


@pytest.mark.parametrize("kw", [dict(freqs=[[1.0]]), dict(freqs=[[-0.1]]), dict(damping=[[-1.0]])])
def test_component_validation(kw):
    args = dict(amplitudes=[1.0], freqs=[[0.1]], damping=[[0.0]])
    args.update(kw)
    with pytest.raises(ValueError):
        SpectralComponents(**args)


def test_generate_ranges():
    x, comp = generate_signal((15, 15, 15), 6, damped=True, rng=3)
    mag = np.abs(comp.amplitudes)
    assert np.all((mag >= 2) & (mag <= 1 + 10**0.5))
    inv = 1 / comp.damping
    for lvl, (lo, hi) in enumerate([(8, 16), (16, 32), (64, 128)]):
        assert np.all((inv[:, lvl] >= lo) & (inv[:, lvl] <= hi))
    assert np.all(np.abs(x) <= mag.sum() + 1e-12)


def test_generate_rejects_order():
    with pytest.raises(ValueError):
        generate_signal((10,), 0)


def test_generate_deterministic():
    a, _ = generate_signal((31,), 4, rng=trial_rng(9, 2))
    b, _ = generate_signal((31,), 4, rng=trial_rng(9, 2))
    assert np.array_equal(a, b)


def test_trial_streams_independent_of_count():
    # trial 3 draws the same values whether or not other trials exist
    first = [trial_rng(5, t).standard_normal(3) for t in range(5)]
    again = trial_rng(5, 3).standard_normal(3)
    assert np.array_equal(first[3], again)
    assert not np.array_equal(first[2], first[3])


def test_sampling_cardinality():
    assert sample_uniform(10, 1.0, 0).indices.tolist() == list(range(10))
    assert sample_uniform(10, 0.5, 0).m == 5
    # half rounds up
    assert sample_uniform(5, 0.5, 0).m == 3
    assert np.array_equal(sample_uniform(100, 0.3, 4).indices, sample_uniform(100, 0.3, 4).indices)


@pytest.mark.parametrize("Sp", [0.0, 1.5, -0.1])
def test_sampling_range(Sp):
    with pytest.raises(ValueError):
        sample_uniform(10, Sp, 0)


def test_mask_validation():
    with pytest.raises(ValueError):
        SampleMask([1, 1, 2], 5)
    with pytest.raises(ValueError):
        SampleMask([0, 5], 5)
    with pytest.raises(ValueError):
        ObservedData(np.ones(4), SampleMask([0, 1], 4))


def test_noise_levels():
    x, _ = generate_signal((40,), 3, rng=1)
    data = observe(x, sample_uniform(40, 0.5, 1))
    assert add_noise(data, 0.0, 2) is data
    noisy = add_noise(data, 1.0, 2)
    assert np.isclose(np.linalg.norm(noisy.noise), np.linalg.norm(data.s), rtol=1e-12)
    noisy = add_noise(data, 0.1, 2)
    snr = 20 * np.log10(np.linalg.norm(data.s) / np.linalg.norm(noisy.noise))
    assert abs(snr - 20) < 1e-9
    off = np.setdiff1d(np.arange(40), data.mask.indices)
    assert np.all(noisy.s[off] == 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 3.0), st.integers(0, 2**31))
def test_noise_ratio_property(eta, seed):
    x, _ = generate_signal((20,), 2, rng=seed)
    data = observe(x, sample_uniform(20, 0.7, seed))
    noisy = add_noise(data, eta, seed)
    assert np.isclose(np.linalg.norm(noisy.noise) / np.linalg.norm(data.s), eta, rtol=1e-12)


def test_nmse():
    x = np.array([1.0, 2.0, -1j])
    assert nmse(x, x) == 0
    assert nmse(np.zeros(3), x) == pytest.approx(1.0)
    assert nmse(2 * x, x) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        nmse(x, np.zeros(3))
