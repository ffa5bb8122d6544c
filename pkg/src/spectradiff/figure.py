"""Spectrum <-> Raman-figure mapping.

A spectrum of length ``M*M`` is min-max scaled to ``[0, 255]`` and written
row-major into an ``M x M`` grid.  Pixels stay real-valued so the mapping is
exactly invertible given the recorded ``(norm_min, norm_max)`` pair.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_spectra
from .exceptions import ShapeError

PIXEL_MAX = 255.0


def _check_side(M):
    M = int(M)
    if M < 2 or M & (M - 1):
        raise ValueError(f"figure side must be a power of two >= 2, got {M}")
    return M


@dataclass(frozen=True, eq=False)
class RamanFigure:
    pixels: np.ndarray
    norm_min: float
    norm_max: float
    degenerate: bool = False

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] != px.shape[1]:
            raise ShapeError(f"figure must be square, got {px.shape}")
        _check_side(px.shape[0])
        if px.size and (px.min() < 0.0 or px.max() > PIXEL_MAX):
            raise ValueError("pixels must lie in [0, 255]")
        if not self.norm_max >= self.norm_min:
            raise ValueError("norm_max must be >= norm_min")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def M(self):
        return self.pixels.shape[0]


def interpolate_spectrum(s, target_len):
    """Linearly resample intensities to ``target_len`` points by index position.

    ``s`` may be a :class:`~spectradiff.io.Spectrum` or a 1-d array.
    """
    y = np.asarray(getattr(s, "intensities", s), dtype=np.float64)
    target_len = int(target_len)
    if target_len < 2:
        raise ValueError(f"target_len must be >= 2, got {target_len}")
    if len(y) == target_len:
        return y.copy()
    src = np.linspace(0.0, 1.0, len(y))
    dst = np.linspace(0.0, 1.0, target_len)
    return np.interp(dst, src, y)


def interpolate_rows(X, target_len):
    """:func:`interpolate_spectrum` applied to every row of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] == target_len:
        return X.copy()
    if target_len < 2:
        raise ValueError(f"target_len must be >= 2, got {target_len}")
    src = np.linspace(0.0, 1.0, X.shape[1])
    dst = np.linspace(0.0, 1.0, target_len)
    # row-wise linear interpolation with shared abscissae
    pos = np.clip(np.searchsorted(src, dst, side="right") - 1, 0, len(src) - 2)
    w = (dst - src[pos]) / (src[pos + 1] - src[pos])
    out = X[:, pos] * (1.0 - w) + X[:, pos + 1] * w
    out[:, 0], out[:, -1] = X[:, 0], X[:, -1]
    return out


def spectrum_to_figure(L, M=32):
    """Fold a length-``M*M`` signal into a min-max scaled ``M x M`` figure.

    A constant signal yields an all-zero figure flagged ``degenerate`` with
    ``norm_max = norm_min + 1``.
    """
    M = _check_side(M)
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 1 or L.size != M * M:
        raise ShapeError(f"signal of shape {L.shape} cannot fill a {M}x{M} figure")
    lo, hi = float(L.min()), float(L.max())
    if hi == lo:
        return RamanFigure(np.zeros((M, M)), lo, lo + 1.0, degenerate=True)
    px = (L - lo) / (hi - lo) * PIXEL_MAX
    return RamanFigure(px.reshape(M, M), lo, hi)


def figure_to_spectrum(f):
    """Inverse of :func:`spectrum_to_figure`."""
    if f.degenerate:
        return np.full(f.M * f.M, f.norm_min)
    return f.pixels.reshape(-1) / PIXEL_MAX * (f.norm_max - f.norm_min) + f.norm_min


def spectra_to_figures(X, M=32):
    """Batched forward map; returns ``(pixels (n, M, M), norms (n, 2))``.

    Constant rows map to zero pixels with ``norm_max = norm_min + 1``.
    """
    M = _check_side(M)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != M * M:
        raise ShapeError(f"signals of shape {X.shape} cannot fill {M}x{M} figures")
    lo, hi = X.min(axis=1), X.max(axis=1)
    flat = hi == lo
    span = np.where(flat, 1.0, hi - lo)
    px = (X - lo[:, None]) / span[:, None] * PIXEL_MAX
    px[flat] = 0.0
    return px.reshape(-1, M, M), np.stack([lo, lo + span], axis=1)


def figures_to_spectra(pixels, norms):
    """Batched inverse map of :func:`spectra_to_figures`."""
    pixels = np.asarray(pixels, dtype=np.float64)
    norms = np.asarray(norms, dtype=np.float64).reshape(-1, 2)
    if len(pixels) != len(norms):
        raise ShapeError(f"{len(pixels)} figures but {len(norms)} norm pairs")
    flat = pixels.reshape(len(pixels), -1)
    return flat / PIXEL_MAX * (norms[:, 1:] - norms[:, :1]) + norms[:, :1]


def write_pgm(figure, path):
    """Export a figure as an 8-bit binary PGM (lossy, inspection only)."""
    px = np.asarray(getattr(figure, "pixels", figure), dtype=np.float64)
    img = np.clip(np.rint(px), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


class FigureTransformer(TransformerMixin, BaseEstimator):
    """Resample spectra to ``side**2`` points and fold them into figures.

    Parameters
    ----------
    side : int, default=32
        Figure side ``M``; must be a power of two.
    """

    def __init__(self, side=32):
        self.side = side

    def fit(self, X, y=None):
        X = check_spectra(X)
        _check_side(self.side)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X, return_norms=False):
        X = check_spectra(X)
        L = interpolate_rows(X, self.side ** 2)
        pixels, norms = spectra_to_figures(L, self.side)
        return (pixels, norms) if return_norms else pixels

    def inverse_transform(self, pixels, norms, n_points=None):
        """Unfold figures back to spectra, optionally resampled to ``n_points``."""
        L = figures_to_spectra(pixels, norms)
        if n_points is None:
            n_points = getattr(self, "n_features_in_", L.shape[1])
        return interpolate_rows(L, n_points)
