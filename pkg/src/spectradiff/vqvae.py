"""Vector-quantized autoencoder compressing Raman figures to a discrete latent grid.

The encoder halves the spatial side twice (``m = M // 4``) and emits ``d``
channels; each latent position is snapped to its nearest codebook vector
and the decoder mirrors the encoder with transposed convolutions.  Training
minimises reconstruction + codebook + ``commitment * commitment`` terms, with
a straight-through copy of the decoder-input gradient onto the encoder.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import nn
from ._validation import check_figures, check_latents, check_rng
from .exceptions import ShapeError, TrainingError
from .figure import PIXEL_MAX

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Codebook:
    embeddings: np.ndarray

    def __post_init__(self):
        e = np.array(self.embeddings, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
            raise ValueError(f"codebook must be (N >= 1, d >= 1), got {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValueError("codebook vectors must be finite")
        e.setflags(write=False)
        object.__setattr__(self, "embeddings", e)

    @property
    def N(self):
        return self.embeddings.shape[0]

    @property
    def d(self):
        return self.embeddings.shape[1]


@dataclass(frozen=True, eq=False)
class LatentGrid:
    """An ``m x m x d`` latent, optionally with its codebook indices."""

    values: np.ndarray
    quantized: bool = False
    indices: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ShapeError(f"latent grid must be (m, m, d), got {v.shape}")
        if self.quantized != (self.indices is not None):
            raise ValueError("indices must be present exactly when quantized")
        object.__setattr__(self, "values", v)
        if self.indices is not None:
            idx = np.array(self.indices, dtype=np.intp)
            if idx.shape != v.shape[:2]:
                raise ShapeError(f"indices {idx.shape} do not match grid {v.shape[:2]}")
            object.__setattr__(self, "indices", idx)


def nearest_codes(z, embeddings):
    """Index of the nearest embedding (squared L2) for each row of ``z``.

    Ties resolve to the lowest index.  Candidates are screened with the
    expanded-norm formula, and any row whose screening is ambiguous is
    re-scored with exact ``sum((z - e)**2)`` distances.
    """
    z = np.asarray(z, dtype=np.float64)
    e = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != e.shape[1]:
        raise ShapeError(f"latent vectors {z.shape} incompatible with codebook {e.shape}")
    if len(z) == 0:
        return np.zeros(0, dtype=np.intp)
    out = np.empty(len(z), dtype=np.intp)
    e_sq = np.einsum("nd,nd->n", e, e)
    chunk = max(1, (1 << 22) // max(1, len(e)))
    for start in range(0, len(z), chunk):
        zc = z[start:start + chunk]
        z_sq = np.einsum("pd,pd->p", zc, zc)
        d2 = z_sq[:, None] - 2.0 * (zc @ e.T) + e_sq[None, :]
        best = d2.min(axis=1)
        scale = z_sq[:, None] + e_sq[None, :] + 1.0
        candidates = d2 <= best[:, None] + 1e-10 * scale
        idx = candidates.argmax(axis=1)
        for r in np.flatnonzero(candidates.sum(axis=1) > 1):
            cand = np.flatnonzero(candidates[r])
            exact = np.sum((zc[r] - e[cand]) ** 2, axis=1)
            idx[r] = cand[np.argmin(exact)]
        out[start:start + chunk] = idx
    return out


def quantize(z_e, codebook):
    """Snap each position of a continuous :class:`LatentGrid` to its nearest code."""
    if z_e.values.shape[2] != codebook.d:
        raise ShapeError(f"latent dim {z_e.values.shape[2]} != codebook dim {codebook.d}")
    m1, m2, d = z_e.values.shape
    idx = nearest_codes(z_e.values.reshape(-1, d), codebook.embeddings).reshape(m1, m2)
    return LatentGrid(codebook.embeddings[idx], quantized=True, indices=idx)


class VQLoss(NamedTuple):
    total: float
    reconstruction: float
    codebook: float
    commitment: float


def vq_loss(figure, reconstruction, z_e, z_q, commitment=0.25):
    """Three-part VQ objective.

    Squared errors are averaged per element; pixel errors are measured on the
    ``[0, 1]`` scale (pixels / 255).  ``commitment`` in the result is the
    unweighted term; ``total = reconstruction + codebook + commitment_weight * commitment``.
    """
    P = np.asarray(figure, dtype=np.float64) / PIXEL_MAX
    R = np.asarray(reconstruction, dtype=np.float64) / PIXEL_MAX
    ze = np.asarray(getattr(z_e, "values", z_e), dtype=np.float64)
    zq = np.asarray(getattr(z_q, "values", z_q), dtype=np.float64)
    if P.shape != R.shape or ze.shape != zq.shape:
        raise ShapeError("vq_loss: figure/reconstruction or z_e/z_q shapes differ")
    rec = float(np.mean((P - R) ** 2))
    # value-wise sg[] is the identity; it only changes where gradients flow
    cb = float(np.mean((ze - zq) ** 2))
    com = float(np.mean((ze - zq) ** 2))
    return VQLoss(rec + cb + commitment * com, rec, cb, com)


def build_encoder(latent_dim, hidden_channels, rng):
    c1, c2 = hidden_channels
    return nn.Sequential(
        nn.Conv2d(1, c1, 4, stride=2, padding=1, rng=rng), nn.ReLU(),
        nn.Conv2d(c1, c2, 4, stride=2, padding=1, rng=rng), nn.ReLU(),
        nn.Conv2d(c2, latent_dim, 3, stride=1, padding=1, rng=rng),
    )


def build_decoder(latent_dim, hidden_channels, rng):
    c1, c2 = hidden_channels
    return nn.Sequential(
        nn.Conv2d(latent_dim, c2, 3, stride=1, padding=1, rng=rng), nn.ReLU(),
        nn.ConvTranspose2d(c2, c1, 4, stride=2, padding=1, rng=rng), nn.ReLU(),
        nn.ConvTranspose2d(c1, 1, 4, stride=2, padding=1, rng=rng), nn.Sigmoid(),
    )


class _VQNet(nn.Module):
    def __init__(self, latent_dim, codebook_size, hidden_channels, rng):
        self.encoder = build_encoder(latent_dim, hidden_channels, rng)
        self.decoder = build_decoder(latent_dim, hidden_channels, rng)
        self.codebook = nn.Parameter(
            rng.uniform(-1.0 / codebook_size, 1.0 / codebook_size,
                        size=(codebook_size, latent_dim)))


def _to_channels_last(z):
    return z.transpose(0, 2, 3, 1)


def _to_channels_first(z):
    return np.ascontiguousarray(z.transpose(0, 3, 1, 2))


class VQVAE(TransformerMixin, BaseEstimator):
    """Vector-quantized autoencoder over ``M x M`` figures.

    Parameters
    ----------
    figure_side : int, default=32
    latent_dim : int, default=16
        Embedding dimension ``d``.
    codebook_size : int, default=1024
        Number of codebook vectors ``N``.
    commitment : float, default=0.25
        Weight of the commitment term.
    hidden_channels : tuple of int, default=(32, 64)
        Channels after the first and second downsampling convolutions.
    epochs, batch_size, learning_rate : training schedule (Adam).
    random_state : int or None
        Seeds initialisation and minibatch order.

    Attributes
    ----------
    latent_side_ : int
    history_ : list of dict
        Per-epoch mean of each loss part plus codebook utilisation.
    """

    def __init__(self, figure_side=32, latent_dim=16, codebook_size=1024,
                 commitment=0.25, hidden_channels=(32, 64), epochs=600,
                 batch_size=32, learning_rate=1e-3, random_state=None):
        self.figure_side = figure_side
        self.latent_dim = latent_dim
        self.codebook_size = codebook_size
        self.commitment = commitment
        self.hidden_channels = hidden_channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    # -- construction -----------------------------------------------------

    def initialize(self):
        """Build freshly initialised networks without training."""
        M = int(self.figure_side)
        if M < 4 or M % 4:
            raise ValueError(f"figure_side must be a multiple of 4, got {M}")
        if self.commitment < 0:
            raise ValueError("commitment weight must be >= 0")
        if self.codebook_size < 1 or self.latent_dim < 1:
            raise ValueError("codebook_size and latent_dim must be >= 1")
        self._rng = check_rng(self.random_state)
        self.net_ = _VQNet(int(self.latent_dim), int(self.codebook_size),
                           tuple(self.hidden_channels), self._rng)
        self.latent_side_ = M // 4
        self.history_ = []
        return self

    @property
    def codebook_(self):
        return Codebook(self.net_.codebook.value)

    # -- forward pieces ---------------------------------------------------

    def encode(self, figures):
        """Continuous latents ``(n, m, m, d)``."""
        check_is_fitted(self, "net_")
        P = check_figures(figures, self.figure_side)
        x = P[:, None] / PIXEL_MAX
        return _to_channels_last(self.net_.encoder.forward(x))

    def quantize(self, z_e):
        """Nearest-code latents and indices: ``((n, m, m, d), (n, m, m))``."""
        check_is_fitted(self, "net_")
        z = check_latents(z_e, self.latent_side_, self.latent_dim)
        e = self.net_.codebook.value
        idx = nearest_codes(z.reshape(-1, z.shape[-1]), e)
        return e[idx].reshape(z.shape), idx.reshape(z.shape[:3])

    def decode(self, z):
        """Figures ``(n, M, M)`` in ``[0, 255]`` from latents ``(n, m, m, d)``."""
        check_is_fitted(self, "net_")
        z = check_latents(z, self.latent_side_, self.latent_dim)
        out = self.net_.decoder.forward(_to_channels_first(z))
        return out[:, 0] * PIXEL_MAX

    def transform(self, figures):
        """Quantized latents ``(n, m, m, d)``."""
        return self.quantize(self.encode(figures))[0]

    def inverse_transform(self, latents):
        return self.decode(latents)

    def reconstruct(self, figures):
        return self.decode(self.transform(figures))

    # -- training ---------------------------------------------------------

    def _forward_backward(self, x, zeta):
        """Loss parts for a ``(n, 1, M, M)`` batch on the [0, 1] scale; fills grads."""
        net = self.net_
        ze = net.encoder.forward(x)
        d = ze.shape[1]
        flat = _to_channels_last(ze).reshape(-1, d)
        idx = nearest_codes(flat, net.codebook.value)
        zq_flat = net.codebook.value[idx]
        zq = _to_channels_first(zq_flat.reshape(ze.shape[0], ze.shape[2], ze.shape[3], d))
        xr = net.decoder.forward(zq)

        rec = float(np.mean((xr - x) ** 2))
        diff = ze - zq
        sq = float(np.mean(diff ** 2))
        total = rec + sq + zeta * sq

        dzq = net.decoder.backward(2.0 * (xr - x) / x.size)
        # straight-through copy of the decoder-input gradient plus commitment
        net.encoder.backward(dzq + zeta * 2.0 * diff / diff.size)
        dflat = _to_channels_last(-2.0 * diff / diff.size).reshape(-1, d)
        np.add.at(net.codebook.grad, idx, dflat)
        return total, rec, sq, sq, idx

    def fit(self, figures, y=None):
        """Train from scratch on ``(n, M, M)`` figures with pixels in ``[0, 255]``."""
        P = check_figures(figures, self.figure_side)
        self.initialize()
        return self._train(P)

    def _train(self, P):
        params = self.net_.parameters()
        opt = nn.AdamState(learning_rate=self.learning_rate)
        x_all = P[:, None] / PIXEL_MAX
        n, bs = len(P), int(self.batch_size)
        zeta = float(self.commitment)
        for epoch in range(1, int(self.epochs) + 1):
            order = self._rng.permutation(n)
            sums = np.zeros(4)
            used = np.zeros(self.codebook_size, dtype=bool)
            for b, start in enumerate(range(0, n, bs)):
                batch = order[start:start + bs]
                total, rec, cb, com, idx = self._forward_backward(x_all[batch], zeta)
                if not np.isfinite(total):
                    raise TrainingError(f"non-finite VQ loss at epoch {epoch}, batch {b}")
                nn.adam_step(opt, params)
                sums += np.array([total, rec, cb, com]) * len(batch)
                used[idx] = True
            sums /= n
            self.history_.append({
                "epoch": epoch, "total": sums[0], "reconstruction": sums[1],
                "codebook": sums[2], "commitment": sums[3],
                "codes_used": int(used.sum()),
            })
            if epoch == 1 or epoch % 50 == 0:
                logger.info("vqvae epoch %d loss %.5f (rec %.5f) codes %d",
                            epoch, sums[0], sums[1], used.sum())
        return self

    def reconstruction_mse(self, figures):
        """Mean squared reconstruction error on the [0, 1] pixel scale."""
        P = check_figures(figures, self.figure_side)
        return float(np.mean(((self.reconstruct(P) - P) / PIXEL_MAX) ** 2))

    # -- persistence ------------------------------------------------------

    def get_state(self):
        check_is_fitted(self, "net_")
        meta = {"params": {k: (list(v) if isinstance(v, tuple) else v)
                           for k, v in self.get_params().items()},
                "latent_side": self.latent_side_}
        return meta, self.net_.state_dict()

    @classmethod
    def from_state(cls, meta, tensors):
        params = dict(meta["params"])
        params["hidden_channels"] = tuple(params["hidden_channels"])
        model = cls(**params)
        model.initialize()
        model.net_.load_state_dict(tensors)
        return model
