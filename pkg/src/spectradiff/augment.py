"""Classical data augmentation: random scaling, Gaussian blur and additive noise."""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d
from sklearn.base import BaseEstimator

from ._validation import check_rng, check_spectra
from .io import Spectrum


@dataclass(frozen=True)
class DAParams:
    """Perturbation magnitudes.

    ``noise_sigma`` is relative to each spectrum's peak-to-peak range;
    ``blur_sigma_range`` is in samples (``None`` disables blurring).
    """

    noise_sigma: float = 0.02
    blur_sigma_range: tuple | None = (0.5, 2.0)
    scale_range: tuple = (0.9, 1.1)

    def __post_init__(self):
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < low <= high, got {self.scale_range}")
        object.__setattr__(self, "scale_range", (float(lo), float(hi)))
        if self.blur_sigma_range is not None:
            lo, hi = self.blur_sigma_range
            if not 0 <= lo <= hi:
                raise ValueError(
                    f"blur_sigma_range must satisfy 0 <= low <= high, got {self.blur_sigma_range}")
            object.__setattr__(self, "blur_sigma_range", (float(lo), float(hi)))


def perturb(x, params, rng):
    """Scale, blur, then add noise to a 1-d intensity array."""
    x = np.asarray(x, dtype=np.float64)
    out = x * rng.uniform(*params.scale_range)
    if params.blur_sigma_range is not None:
        sigma = rng.uniform(*params.blur_sigma_range)
        if sigma > 0:
            out = gaussian_filter1d(out, sigma, mode="reflect", truncate=4.0)
    if params.noise_sigma > 0:
        out = out + rng.normal(0.0, params.noise_sigma * np.ptp(x), size=out.shape)
    return out


def augment_da(s, params=None, rng=None):
    """Randomly perturbed copy of spectrum ``s`` (same grid and label)."""
    params = DAParams() if params is None else params
    rng = check_rng(rng)
    return Spectrum(s.wavenumbers, perturb(s.intensities, params, rng), s.label)


def generate_da(dataset, per_class_count, params=None, rng_seed=None):
    """``per_class_count`` augmented spectra per class, sources drawn uniformly per class."""
    params = DAParams() if params is None else params
    rng = check_rng(rng_seed)
    per_class_count = int(per_class_count)
    if per_class_count < 0:
        raise ValueError("per_class_count must be >= 0")
    counts = dataset.class_counts()
    for k, c in enumerate(counts):
        if c == 0:
            raise ValueError(f"class {dataset.class_names[k]!r} has no spectra to augment")
    rows, labels = [], []
    for k in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == k)
        for src in rng.choice(members, size=per_class_count, replace=True):
            rows.append(perturb(dataset.intensities[src], params, rng))
            labels.append(k)
    x = np.array(rows).reshape(-1, len(dataset.wavenumbers))
    return dataset.with_intensities(x, np.array(labels, dtype=np.intp))


class DAAugmenter(BaseEstimator):
    """Estimator wrapper: ``fit`` stores the source spectra, ``sample`` perturbs them."""

    def __init__(self, noise_sigma=0.02, blur_sigma_range=(0.5, 2.0), scale_range=(0.9, 1.1),
                 random_state=None):
        self.noise_sigma = noise_sigma
        self.blur_sigma_range = blur_sigma_range
        self.scale_range = scale_range
        self.random_state = random_state

    def fit(self, X, y):
        self.X_ = check_spectra(X)
        self.y_ = np.asarray(y)
        self.classes_ = np.unique(self.y_)
        self.params_ = DAParams(self.noise_sigma, self.blur_sigma_range, self.scale_range)
        self._rng = check_rng(self.random_state)
        return self

    def sample(self, label, count):
        members = np.flatnonzero(self.y_ == label)
        if not len(members):
            raise ValueError(f"unknown class {label!r}")
        src = self._rng.choice(members, size=int(count), replace=True)
        return np.array([perturb(self.X_[i], self.params_, self._rng) for i in src]
                        ).reshape(-1, self.X_.shape[1])
