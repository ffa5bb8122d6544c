import numpy as np
import pytest

from spectradiff.augment import DAAugmenter, DAParams, augment_da, generate_da, perturb
from spectradiff.io import LabeledDataset, Spectrum, SynthSpec, generate_synthetic


def test_scale_only():
    x = np.linspace(1, 2, 50)
    out = perturb(x, DAParams(noise_sigma=0, blur_sigma_range=None, scale_range=(0.9, 1.1)),
                  np.random.default_rng(0))
    ratio = out / x
    assert np.ptp(ratio) < 1e-12 and 0.9 <= ratio[0] <= 1.1


def test_blur_of_impulse_is_gaussian():
    x = np.zeros(101)
    x[50] = 1.0
    params = DAParams(noise_sigma=0, blur_sigma_range=(2.0, 2.0), scale_range=(1, 1))
    out = perturb(x, params, np.random.default_rng(0))
    k = np.arange(-8, 9)
    kernel = np.exp(-0.5 * (k / 2.0) ** 2)
    np.testing.assert_allclose(out[42:59], kernel / kernel.sum(), atol=1e-12)
    assert out.sum() == pytest.approx(1.0)


def test_noise_level_relative_to_range():
    x = np.zeros(200_000)
    x[0] = 4.0
    params = DAParams(noise_sigma=0.05, blur_sigma_range=None, scale_range=(1, 1))
    out = perturb(x, params, np.random.default_rng(1))
    assert out[1:].std() == pytest.approx(0.2, rel=0.01)


def test_augment_da_keeps_grid_and_label():
    s = Spectrum(np.arange(10.0), np.random.default_rng(2).random(10), 3)
    out = augment_da(s, rng=0)
    assert out.label == 3 and np.array_equal(out.wavenumbers, s.wavenumbers)
    assert not np.array_equal(out.intensities, s.intensities)


def test_generate_da_balanced_and_seeded():
    ds = generate_synthetic(SynthSpec(class_count=3, samples_per_class=2, grid_points=40))
    a = generate_da(ds, 5, rng_seed=1)
    assert a.class_counts().tolist() == [5, 5, 5]
    assert a.class_names == ds.class_names
    assert a.equals(generate_da(ds, 5, rng_seed=1))


def test_generate_da_rejects_empty_class():
    ds = LabeledDataset(np.ones((2, 3)), [0, 0], ["a", "b"], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError, match="'b'"):
        generate_da(ds, 1)


def test_params_validation():
    with pytest.raises(ValueError):
        DAParams(scale_range=(1.2, 1.0))
    with pytest.raises(ValueError):
        DAParams(noise_sigma=-1)


def test_augmenter_estimator():
    X = np.random.default_rng(3).random((6, 20))
    y = np.array([0, 0, 0, 1, 1, 1])
    aug = DAAugmenter(random_state=0).fit(X, y)
    assert aug.sample(1, 4).shape == (4, 20)
    with pytest.raises(ValueError):
        aug.sample(7, 1)
