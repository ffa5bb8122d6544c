"""End-to-end generator: spectra -> figures -> VQ latents -> conditional DDPM -> spectra."""

import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_rng, check_spectra
from .diffusion import LatentDDPM
from .figure import figures_to_spectra, interpolate_rows, spectra_to_figures
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .vqvae import VQVAE

logger = logging.getLogger(__name__)


class DiffRaman(BaseEstimator):
    """Class-conditional latent diffusion generator for 1-D spectra.

    Defaults: Adam at 1e-3, 600 autoencoder epochs, 1000 diffusion epochs,
    T = 500, linear betas from 1e-4 to 0.02, batch 32, d = 16, N = 1024.

    Decoded figures carry no amplitude information, so each generated
    spectrum is rescaled with a ``(min, max)`` pair drawn from the training
    spectra of the requested class.

    Attributes
    ----------
    classes_ : ndarray
        Sorted class labels seen in ``fit``.
    vqvae_ : VQVAE
    ddpm_ : LatentDDPM
    norms_ : ndarray of shape (n_samples, 2)
        Per-training-spectrum ``(min, max)`` after resampling.
    norm_labels_ : ndarray
        Encoded class index of each row of ``norms_``.
    """

    def __init__(self, figure_side=32, latent_dim=16, codebook_size=1024, commitment=0.25,
                 hidden_channels=(32, 64), vq_epochs=600, steps=500, beta_start=1e-4,
                 beta_end=0.02, base_channels=64, depth=2, time_embed_dim=128,
                 ddpm_epochs=1000, batch_size=32, learning_rate=1e-3, requantize=True,
                 random_state=None):
        self.figure_side = figure_side
        self.latent_dim = latent_dim
        self.codebook_size = codebook_size
        self.commitment = commitment
        self.hidden_channels = hidden_channels
        self.vq_epochs = vq_epochs
        self.steps = steps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.base_channels = base_channels
        self.depth = depth
        self.time_embed_dim = time_embed_dim
        self.ddpm_epochs = ddpm_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.requantize = requantize
        self.random_state = random_state

    def _seeds(self):
        if self.random_state is None:
            return None, None
        ss = np.random.SeedSequence(self.random_state)
        a, b = ss.spawn(2)
        return int(a.generate_state(1)[0]), int(b.generate_state(1)[0])

    def figures(self, X):
        """Resample spectra to ``figure_side**2`` points and fold into figures."""
        X = check_spectra(X)
        return spectra_to_figures(interpolate_rows(X, self.figure_side ** 2), self.figure_side)

    def fit(self, X, y):
        X = check_spectra(X)
        self.fit_autoencoder(X)
        return self.fit_diffusion(X, y)

    def fit_autoencoder(self, X, y=None):
        """Stage I: train the VQ-VAE on the figures of ``X``."""
        X = check_spectra(X)
        pixels, _ = self.figures(X)
        self.n_features_in_ = X.shape[1]
        self.vqvae_ = VQVAE(self.figure_side, self.latent_dim, self.codebook_size,
                            self.commitment, self.hidden_channels, self.vq_epochs,
                            self.batch_size, self.learning_rate, self._seeds()[0])
        self.vqvae_.fit(pixels)
        return self

    def fit_diffusion(self, X, y):
        """Stage II: train the conditional DDPM on the quantized latents of ``X``."""
        check_is_fitted(self, "vqvae_")
        X = check_spectra(X)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError(f"{len(X)} spectra but {len(y)} labels")
        self.classes_, codes = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        pixels, norms = self.figures(X)
        latents = self.vqvae_.transform(pixels)
        self.norms_ = norms
        self.norm_labels_ = codes
        self.ddpm_ = LatentDDPM(self.steps, self.beta_start, self.beta_end, self.base_channels,
                                self.depth, self.time_embed_dim, self.ddpm_epochs,
                                self.batch_size, self.learning_rate, True, self._seeds()[1])
        self.ddpm_.fit(latents, codes, n_classes=len(self.classes_))
        return self

    def _class_index(self, label):
        hits = np.flatnonzero(self.classes_ == label)
        if not len(hits):
            raise ValueError(f"unknown class {label!r}; known: {list(self.classes_)}")
        return int(hits[0])

    def sample(self, label, count, random_state=None, n_points=None):
        """Generate ``count`` spectra of class ``label``; shape ``(count, n_points)``."""
        check_is_fitted(self, "ddpm_")
        rng = check_rng(random_state)
        k = self._class_index(label)
        n_points = self.n_features_in_ if n_points is None else n_points
        if int(count) == 0:
            return np.zeros((0, n_points))
        z = self.ddpm_.sample(k, count, rng)
        if self.requantize:
            z = self.vqvae_.quantize(z)[0]
        pixels = self.vqvae_.decode(z)
        pool = self.norms_[self.norm_labels_ == k]
        norms = pool[rng.integers(0, len(pool), size=int(count))]
        return interpolate_rows(figures_to_spectra(pixels, norms), n_points)

    def sample_balanced(self, per_class, random_state=None):
        """``per_class`` spectra for every class; returns ``(X, y)``."""
        rng = check_rng(random_state)
        xs, ys = [], []
        for label in self.classes_:
            xs.append(self.sample(label, per_class, rng))
            ys.append(np.full(int(per_class), label))
        return np.concatenate(xs), np.concatenate(ys)


# -- persistence --------------------------------------------------------------

def save_vqvae(path, vqvae, class_names=(), wavenumbers=None):
    """Write a ``vqvae`` checkpoint (hyperparameters, class registry, weights)."""
    meta, tensors = vqvae.get_state()
    meta.update({
        "M": int(vqvae.figure_side), "m": int(vqvae.latent_side_), "d": int(vqvae.latent_dim),
        "N": int(vqvae.codebook_size), "zeta": float(vqvae.commitment),
        "class_names": list(class_names),
    })
    if wavenumbers is not None:
        tensors = dict(tensors, __wavenumbers__=np.asarray(wavenumbers, dtype=np.float64))
    save_checkpoint(path, "vqvae", meta, tensors)


def load_vqvae(path):
    """Returns ``(vqvae, class_names, wavenumbers_or_None)``."""
    meta, tensors = load_checkpoint(path, kind="vqvae")
    wn = tensors.pop("__wavenumbers__", None)
    return VQVAE.from_state(meta, tensors), tuple(meta["class_names"]), wn


def save_generator(path, model, class_names, wavenumbers=None):
    """Write a ``ddpm`` checkpoint for a fitted :class:`DiffRaman`.

    ``class_names[i]`` names the label value ``model.classes_[i]``.
    """
    check_is_fitted(model, "ddpm_")
    meta, tensors = model.ddpm_.get_state()
    params = model.get_params()
    params["hidden_channels"] = list(params["hidden_channels"])
    meta.update({
        "pipeline_params": params,
        "class_names": list(class_names),
        "classes": model.classes_.tolist(),
        "n_features_in": int(model.n_features_in_),
        "schedule": {"T": int(model.steps), "beta_start": float(model.beta_start),
                     "beta_end": float(model.beta_end)},
    })
    tensors = dict(tensors, __norms__=model.norms_, __norm_labels__=model.norm_labels_)
    if wavenumbers is not None:
        tensors["__wavenumbers__"] = np.asarray(wavenumbers, dtype=np.float64)
    save_checkpoint(path, "ddpm", meta, tensors)


def load_generator(ddpm_path, vqvae_path):
    """Rebuild a fitted :class:`DiffRaman`; returns ``(model, class_names, wavenumbers)``."""
    vqvae, _, _ = load_vqvae(vqvae_path)
    meta, tensors = load_checkpoint(ddpm_path, kind="ddpm")
    params = dict(meta["pipeline_params"])
    params["hidden_channels"] = tuple(params["hidden_channels"])
    model = DiffRaman(**params)
    model.vqvae_ = vqvae
    model.norms_ = tensors.pop("__norms__")
    model.norm_labels_ = tensors.pop("__norm_labels__").astype(np.intp)
    wn = tensors.pop("__wavenumbers__", None)
    model.ddpm_ = LatentDDPM.from_state(meta, tensors)
    model.classes_ = np.asarray(meta["classes"])
    model.n_features_in_ = int(meta["n_features_in"])
    if tuple(model.ddpm_.latent_shape_) != (vqvae.latent_side_, vqvae.latent_side_,
                                             vqvae.latent_dim):
        raise ValueError("ddpm checkpoint latent shape does not match the vqvae checkpoint")
    return model, tuple(meta["class_names"]), wn
