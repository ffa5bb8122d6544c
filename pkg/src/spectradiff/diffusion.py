"""Class-conditional DDPM over latent grids.

Timesteps are 1-based throughout: ``t = 1..T`` indexes ``betas[t - 1]``.
The functional core (:func:`q_sample`, :func:`ddpm_loss`,
:func:`p_sample_step`, :func:`sample`) is shape-agnostic over the batch and
works with any *denoiser* callable ``denoiser(z_t, t, y) -> eps_hat``;
:class:`LatentDDPM` wires it to the U-Net and handles latent normalisation.
"""

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nn
from ._validation import check_labels, check_rng
from .exceptions import SamplingError, ShapeError, TrainingError
from .unet import UNetConfig, build_unet

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray

    @classmethod
    def from_betas(cls, betas):
        betas = np.array(betas, dtype=np.float64).reshape(-1)
        if betas.size < 1 or np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("betas must be a non-empty sequence in (0, 1)")
        alphas = 1.0 - betas
        arrays = [betas, alphas, np.cumprod(alphas), np.sqrt(betas)]
        for a in arrays:
            a.setflags(write=False)
        return cls(*arrays)

    @property
    def T(self):
        return len(self.betas)

    def at(self, t):
        """``(beta, alpha, alpha_bar, sigma)`` at 1-based step(s) ``t``."""
        i = np.asarray(t) - 1
        return self.betas[i], self.alphas[i], self.alpha_bars[i], self.sigmas[i]


def linear_beta_schedule(T, beta_start=1e-4, beta_end=0.02):
    """Betas spaced linearly from ``beta_start`` (t=1) to ``beta_end`` (t=T)."""
    T = int(T)
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = beta_start + np.arange(T) / (T - 1) * (beta_end - beta_start)
        betas[-1] = beta_end
    return DiffusionSchedule.from_betas(betas)


def _check_t(t, T):
    t = np.asarray(t)
    if t.size and (np.any(t < 1) or np.any(t > T)):
        raise ValueError(f"timestep out of range [1, {T}]")
    return t


def _bcast(v, ndim):
    v = np.asarray(v, dtype=np.float64)
    return v.reshape(v.shape + (1,) * (ndim - v.ndim))


def q_sample(z0, t, eps, schedule):
    """Closed-form forward noising ``sqrt(ab_t) z0 + sqrt(1 - ab_t) eps``.

    ``t`` is a scalar or one step per leading-axis sample.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != z0.shape:
        raise ShapeError(f"noise shape {eps.shape} != latent shape {z0.shape}")
    t = _check_t(t, schedule.T)
    ab = schedule.alpha_bars[t - 1]
    if np.ndim(ab):
        ab = _bcast(ab, z0.ndim)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def ddpm_loss(denoiser, schedule, z0, y, rng, class_count=None):
    """Monte-Carlo noise-prediction loss for one batch.

    Draws ``t ~ U{1..T}`` and ``eps ~ N(0, I)`` per sample, then returns
    ``(loss, t, grad)`` where ``grad`` is ``dloss/d eps_hat`` for
    backpropagation into the denoiser.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    n = z0.shape[0]
    if class_count is None:
        class_count = getattr(getattr(denoiser, "config", None), "class_count", None)
    if class_count is not None:
        y = check_labels(y, class_count, n)
    t = rng.integers(1, schedule.T + 1, size=n)
    eps = rng.standard_normal(z0.shape)
    z_t = q_sample(z0, t, eps, schedule)
    eps_hat = denoiser(z_t, t, y)
    diff = eps_hat - eps
    loss = float(np.mean(diff * diff))
    return loss, t, 2.0 * diff / diff.size


def reverse_step(z_t, eps_hat, alpha, alpha_bar, beta, noise):
    """One ancestral update with ``sigma = sqrt(beta)``."""
    return (z_t - beta / np.sqrt(1.0 - alpha_bar) * eps_hat) / np.sqrt(alpha) \
        + np.sqrt(beta) * noise


def p_sample_step(denoiser, schedule, z_t, t, y, rng):
    """Draw ``z_{t-1}`` given ``z_t``; the final step (t = 1) adds no noise."""
    t = int(_check_t(t, schedule.T))
    z_t = np.asarray(z_t, dtype=np.float64)
    n = z_t.shape[0]
    eps_hat = denoiser(z_t, np.full(n, t), y)
    noise = rng.standard_normal(z_t.shape) if t > 1 else np.zeros_like(z_t)
    beta, alpha, alpha_bar, _ = schedule.at(t)
    return reverse_step(z_t, eps_hat, alpha, alpha_bar, beta, noise)


def sample(denoiser, schedule, y, count, shape, rng):
    """Ancestral sampling of ``count`` latents of ``shape`` for class ``y``."""
    count = int(count)
    if count == 0:
        return np.zeros((0,) + tuple(shape))
    labels = np.broadcast_to(np.asarray(y), (count,)).copy()
    z = rng.standard_normal((count,) + tuple(shape))
    for t in range(schedule.T, 0, -1):
        z = p_sample_step(denoiser, schedule, z, t, labels, rng)
        if not np.all(np.isfinite(z)):
            raise SamplingError(f"non-finite latent produced at step t={t}")
    return z


class LatentDDPM(BaseEstimator):
    """Conditional DDPM on ``(n, m, m, d)`` latents.

    Parameters
    ----------
    steps : int, default=500
        Number of diffusion steps ``T``.
    beta_start, beta_end : float
        Endpoints of the linear variance schedule.
    base_channels, depth, time_embed_dim : U-Net size.
    epochs, batch_size, learning_rate : training schedule (Adam).
    normalize : bool, default=True
        Standardise each latent channel with training-set statistics before
        diffusion, undo it after sampling.
    random_state : int or None
    """

    def __init__(self, steps=500, beta_start=1e-4, beta_end=0.02, base_channels=64,
                 depth=2, time_embed_dim=128, epochs=1000, batch_size=32,
                 learning_rate=1e-3, normalize=True, random_state=None):
        self.steps = steps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.base_channels = base_channels
        self.depth = depth
        self.time_embed_dim = time_embed_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.normalize = normalize
        self.random_state = random_state

    def initialize(self, latent_shape, n_classes):
        m, m2, d = latent_shape
        if m != m2:
            raise ShapeError(f"latents must be square, got {latent_shape}")
        self._rng = check_rng(self.random_state)
        self.schedule_ = linear_beta_schedule(self.steps, self.beta_start, self.beta_end)
        self.config_ = UNetConfig(class_count=int(n_classes), latent_side=m, latent_channels=d,
                                  base_channels=self.base_channels, depth=self.depth,
                                  time_embed_dim=self.time_embed_dim, num_steps=int(self.steps))
        self.unet_ = build_unet(self.config_, self._rng)
        self.latent_shape_ = (m, m, d)
        self.n_classes_ = int(n_classes)
        self.latent_mean_ = np.zeros(d)
        self.latent_std_ = np.ones(d)
        self.history_ = []
        return self

    def _denoiser(self, z_t, t, y):
        return self.unet_.forward(z_t, t, y)

    def fit(self, latents, y, n_classes=None):
        """Train on channels-last latents with integer labels ``y``."""
        Z = np.asarray(latents, dtype=np.float64)
        if Z.ndim != 4:
            raise ShapeError(f"latents must be (n, m, m, d), got {Z.shape}")
        if len(Z) == 0:
            raise ValueError("cannot fit on an empty latent set")
        if n_classes is None:
            n_classes = int(np.max(y)) + 1
        y = check_labels(y, n_classes, len(Z))
        self.initialize(Z.shape[1:], n_classes)
        if self.normalize:
            self.latent_mean_ = Z.mean(axis=(0, 1, 2))
            std = Z.std(axis=(0, 1, 2))
            self.latent_std_ = np.where(std > 1e-12, std, 1.0)
        z0 = np.ascontiguousarray(
            ((Z - self.latent_mean_) / self.latent_std_).transpose(0, 3, 1, 2))
        return self._train(z0, y)

    def _train(self, z0, y):
        params = self.unet_.parameters()
        opt = nn.AdamState(learning_rate=self.learning_rate)
        n, bs = len(z0), int(self.batch_size)
        for epoch in range(1, int(self.epochs) + 1):
            order = self._rng.permutation(n)
            total = 0.0
            for b, start in enumerate(range(0, n, bs)):
                batch = order[start:start + bs]
                loss, _, grad = ddpm_loss(self._denoiser, self.schedule_, z0[batch], y[batch],
                                          self._rng, self.n_classes_)
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite DDPM loss at epoch {epoch}, batch {b}")
                self.unet_.backward(grad)
                nn.adam_step(opt, params)
                total += loss * len(batch)
            self.history_.append({"epoch": epoch, "loss": total / n})
            if epoch == 1 or epoch % 50 == 0:
                logger.info("ddpm epoch %d loss %.5f", epoch, total / n)
        return self

    def sample(self, y, count, random_state=None):
        """``count`` channels-last latents for class index ``y``."""
        check_is_fitted(self, "unet_")
        check_labels(np.atleast_1d(y), self.n_classes_)
        rng = check_rng(random_state)
        m, _, d = self.latent_shape_
        z = sample(self._denoiser, self.schedule_, y, count, (d, m, m), rng)
        return z.transpose(0, 2, 3, 1) * self.latent_std_ + self.latent_mean_

    def get_state(self):
        check_is_fitted(self, "unet_")
        meta = {"params": self.get_params(), "latent_shape": list(self.latent_shape_),
                "n_classes": self.n_classes_}
        tensors = {"latent_mean": self.latent_mean_, "latent_std": self.latent_std_}
        tensors.update({f"unet.{k}": v for k, v in self.unet_.state_dict().items()})
        return meta, tensors

    @classmethod
    def from_state(cls, meta, tensors):
        model = cls(**meta["params"])
        model.initialize(tuple(meta["latent_shape"]), meta["n_classes"])
        model.latent_mean_ = np.array(tensors["latent_mean"])
        model.latent_std_ = np.array(tensors["latent_std"])
        model.unet_.load_state_dict({k[5:]: v for k, v in tensors.items() if k.startswith("unet.")})
        return model
