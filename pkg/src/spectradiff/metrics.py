"""Similarity between sets of real and generated spectra.

The distribution metrics are parametric: each set is summarised by a
multivariate Gaussian fit and the distances are evaluated in closed form.

* ``frechet_distance``: ``|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))``,
  the squared 2-Wasserstein distance between the fits.
* ``mmd_gaussian``: squared MMD with a linear kernel, ``|mu1 - mu2|^2``.
* ``jsd_gaussian``: Jensen-Shannon divergence where the mixture midpoint is
  replaced by the Gaussian matching its first two moments.
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError

logger = logging.getLogger(__name__)

JITTER = 1e-6


@dataclass(frozen=True, eq=False)
class GaussianFit:
    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int

    @property
    def dim(self):
        return self.mean.shape[0]


def _as_set(A):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[None]
    if A.ndim != 2:
        raise ShapeError(f"expected a 2-d set of vectors, got {A.shape}")
    return A


def cosine_similarity_mean(A, B):
    """Mean cosine similarity over all ``|A| x |B|`` pairs (zero vectors count 0)."""
    A, B = _as_set(A), _as_set(B)
    if not len(A) or not len(B):
        raise ValueError("cosine similarity needs two non-empty sets")
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"vector lengths differ: {A.shape[1]} vs {B.shape[1]}")
    na, nb = np.linalg.norm(A, axis=1), np.linalg.norm(B, axis=1)
    ua = np.divide(A, na[:, None], out=np.zeros_like(A), where=na[:, None] > 0)
    ub = np.divide(B, nb[:, None], out=np.zeros_like(B), where=nb[:, None] > 0)
    return float((ua.sum(axis=0) @ ub.sum(axis=0)) / (len(A) * len(B)))


def fit_gaussian(X, jitter=JITTER):
    """Sample mean and unbiased covariance plus ``jitter * I``."""
    X = _as_set(X)
    if len(X) < 2:
        raise ValueError(f"fit_gaussian needs at least 2 samples, got {len(X)}")
    mu = X.mean(axis=0)
    D = X - mu
    cov = D.T @ D / (len(X) - 1)
    cov = 0.5 * (cov + cov.T) + jitter * np.eye(X.shape[1])
    return GaussianFit(mu, cov, len(X))


def _check_pair(g1, g2):
    if g1.dim != g2.dim:
        raise ValueError(f"dimension mismatch: {g1.dim} vs {g2.dim}")


def _psd_sqrt(S):
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def frechet_distance(g1, g2):
    _check_pair(g1, g2)
    diff = g1.mean - g2.mean
    r1 = _psd_sqrt(g1.covariance)
    # tr((S1 S2)^(1/2)) = tr((S1^(1/2) S2 S1^(1/2))^(1/2)), the latter symmetric PSD
    w = np.linalg.eigvalsh(r1 @ g2.covariance @ r1)
    tr_cross = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    fd = float(diff @ diff) + float(np.trace(g1.covariance) + np.trace(g2.covariance)) \
        - 2.0 * tr_cross
    return max(fd, 0.0)


def mmd_gaussian(g1, g2):
    _check_pair(g1, g2)
    diff = g1.mean - g2.mean
    return float(diff @ diff)


def _kl_gaussian(mu0, S0, mu1, S1):
    k = len(mu0)
    L1 = np.linalg.cholesky(S1)
    inv_L1 = np.linalg.solve(L1, np.eye(k))
    S1_inv = inv_L1.T @ inv_L1
    d = mu1 - mu0
    _, logdet0 = np.linalg.slogdet(S0)
    logdet1 = 2.0 * np.log(np.diag(L1)).sum()
    return 0.5 * (np.trace(S1_inv @ S0) + d @ S1_inv @ d - k + logdet1 - logdet0)


def moment_matched_midpoint(g1, g2):
    """Mean and covariance of the equal-weight mixture of two Gaussians."""
    mu = 0.5 * (g1.mean + g2.mean)
    d = 0.5 * (g1.mean - g2.mean)
    cov = 0.5 * (g1.covariance + g2.covariance) + np.outer(d, d)
    return mu, cov


def jsd_gaussian(g1, g2):
    _check_pair(g1, g2)
    mu, cov = moment_matched_midpoint(g1, g2)
    kl1 = _kl_gaussian(g1.mean, g1.covariance, mu, cov)
    kl2 = _kl_gaussian(g2.mean, g2.covariance, mu, cov)
    return max(float(0.5 * kl1 + 0.5 * kl2), 0.0)


def similarity_report(real, generated):
    """``{cos, mmd, jsd, fd}`` between two sets of equal-length spectra."""
    g_real, g_gen = fit_gaussian(real), fit_gaussian(generated)
    return {
        "cos": cosine_similarity_mean(generated, real),
        "mmd": mmd_gaussian(g_gen, g_real),
        "jsd": jsd_gaussian(g_gen, g_real),
        "fd": frechet_distance(g_gen, g_real),
    }


def write_report(rows, path):
    """Write ``[(method, {cos, mmd, jsd, fd}), ...]`` as a CSV table."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "cos", "mmd", "jsd", "fd"])
        for method, r in rows:
            w.writerow([method] + [repr(float(r[k])) for k in ("cos", "mmd", "jsd", "fd")])


def export_pca(sets, components=2):
    """Project labelled vector sets onto principal components of their union.

    ``sets`` maps a set id to ``(vectors, labels)``.  Returns a list of
    ``(set_id, label, pc1, pc2, ...)`` rows in input order.
    """
    ids, labels, blocks = [], [], []
    for set_id, (X, y) in sets.items():
        X = _as_set(X)
        y = np.broadcast_to(np.asarray(y, dtype=object), (len(X),))
        blocks.append(X)
        ids.extend([set_id] * len(X))
        labels.extend(y)
    if not blocks:
        raise ValueError("export_pca needs at least one set")
    X = np.concatenate(blocks)
    if len(X) < 2:
        raise ValueError("export_pca needs at least 2 vectors in total")
    D = X - X.mean(axis=0)
    _, s, Vt = np.linalg.svd(D, full_matrices=False)
    scale = np.abs(X).max() if X.size else 0.0
    if not s.size or s[0] <= 1e-12 * max(scale, 1.0) * np.sqrt(D.size):
        logger.warning("export_pca: all vectors are identical; projections are zero")
        proj = np.zeros((len(X), components))
    else:
        # deterministic sign: largest-magnitude loading of each component positive
        signs = np.sign(Vt[np.arange(len(Vt)), np.abs(Vt).argmax(axis=1)])
        Vt = Vt * signs[:, None]
        k = min(components, Vt.shape[0])
        proj = np.zeros((len(X), components))
        proj[:, :k] = D @ Vt[:k].T
    return [(i, lab, *map(float, p)) for i, lab, p in zip(ids, labels, proj)]


def write_pca(rows, path, components=2):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set_id", "label"] + [f"pc{i + 1}" for i in range(components)])
        for row in rows:
            w.writerow([row[0], row[1]] + [repr(v) for v in row[2:]])
