"""Input validation helpers shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ShapeError


def check_spectra(X, min_samples=1):
    """2-d float64 array of spectra, finite, at least two points per row."""
    return check_array(X, dtype=np.float64, ensure_min_samples=min_samples,
                       ensure_min_features=2)


def check_labels(y, n_classes, n_samples=None):
    y = np.asarray(y)
    if y.ndim == 0:
        y = y.reshape(1)
    if y.ndim != 1:
        raise ShapeError(f"labels must be 1-d, got shape {y.shape}")
    if n_samples is not None and len(y) != n_samples:
        raise ShapeError(f"{n_samples} samples but {len(y)} labels")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integer class indices")
    y = y.astype(np.intp)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{y.min()}, {y.max()}]")
    return y


def check_figures(P, side):
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 2:
        P = P[None]
    if P.ndim != 3 or P.shape[1:] != (side, side):
        raise ShapeError(f"expected figures of shape (n, {side}, {side}), got {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValueError("figures contain non-finite pixels")
    return P


def check_latents(Z, side, dim):
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 3:
        Z = Z[None]
    if Z.ndim != 4 or Z.shape[1:] != (side, side, dim):
        raise ShapeError(f"expected latents of shape (n, {side}, {side}, {dim}), got {Z.shape}")
    return Z


def check_rng(random_state):
    """numpy ``Generator`` from a seed, an existing generator, or ``None``."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    if isinstance(random_state, np.random.RandomState):
        return np.random.default_rng(random_state.randint(2**63 - 1))
    return np.random.default_rng(random_state)
