"""Conditional noise predictor: a small U-Net over ``(N, d, m, m)`` latents.

Timesteps go through a sinusoidal encoding and a two-layer MLP; class labels
through a learned embedding.  Their sum is projected into every residual
block and added after the block's first convolution.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .exceptions import ConfigError, ShapeError
from .nn.functional import sinusoidal_embedding

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UNetConfig:
    class_count: int
    latent_side: int = 8
    latent_channels: int = 16
    base_channels: int = 64
    depth: int = 2
    time_embed_dim: int = 128
    num_steps: int | None = None

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.class_count < 1:
            raise ConfigError("class_count must be >= 1")
        if self.base_channels < 1 or self.time_embed_dim < 2:
            raise ConfigError("base_channels must be >= 1 and time_embed_dim >= 2")
        if self.latent_side % (2 ** self.depth):
            raise ConfigError(
                f"latent side {self.latent_side} not divisible by 2**depth = {2 ** self.depth}")
        if self.bottleneck_side < 2:
            raise ConfigError(
                f"bottleneck side {self.bottleneck_side} < 2 for latent side "
                f"{self.latent_side} and depth {self.depth}")

    @property
    def bottleneck_side(self):
        return self.latent_side // (2 ** self.depth)

    @property
    def channels(self):
        return [self.base_channels * 2 ** i for i in range(self.depth + 1)]


def _groups(c, preferred=8):
    # keep >= 2 channels per group so per-channel conditioning offsets survive
    return math.gcd(preferred, max(1, c // 2))


class ResBlock(nn.Module):
    def __init__(self, cin, cout, emb_dim, rng):
        self.norm1 = nn.GroupNorm(_groups(cin), cin)
        self.act1 = nn.SiLU()
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1, rng=rng)
        self.emb_act = nn.SiLU()
        self.emb_proj = nn.Linear(emb_dim, cout, rng=rng)
        self.norm2 = nn.GroupNorm(_groups(cout), cout)
        self.act2 = nn.SiLU()
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, rng=rng)
        self.skip = nn.Conv2d(cin, cout, 1, rng=rng) if cin != cout else None

    def forward(self, x, emb):
        h = self.conv1(self.act1(self.norm1(x)))
        h = h + self.emb_proj(self.emb_act(emb))[:, :, None, None]
        h = self.conv2(self.act2(self.norm2(h)))
        return h + (self.skip(x) if self.skip is not None else x)

    def backward(self, grad):
        dh = self.norm2.backward(self.act2.backward(self.conv2.backward(grad)))
        demb = self.emb_act.backward(self.emb_proj.backward(dh.sum(axis=(2, 3))))
        dx = self.norm1.backward(self.act1.backward(self.conv1.backward(dh)))
        dx = dx + (self.skip.backward(grad) if self.skip is not None else grad)
        return dx, demb


class UNet(nn.Module):
    """``eps_theta(z_t, t, y)``; call with NCHW latents, int timesteps and labels."""

    def __init__(self, config, rng=None):
        rng = np.random.default_rng(rng)
        self.config = config
        ch = config.channels
        E = config.time_embed_dim
        self.time_mlp = nn.Sequential(nn.Linear(E, E, rng=rng), nn.SiLU(), nn.Linear(E, E, rng=rng))
        self.class_emb = nn.Embedding(config.class_count, E, rng=rng, scale=2.0)
        self.in_conv = nn.Conv2d(config.latent_channels, ch[0], 3, padding=1, rng=rng)
        self.down_blocks = [ResBlock(ch[i], ch[i], E, rng) for i in range(config.depth)]
        self.downsamples = [nn.Conv2d(ch[i], ch[i + 1], 3, stride=2, padding=1, rng=rng)
                            for i in range(config.depth)]
        self.mid_block = ResBlock(ch[-1], ch[-1], E, rng)
        self.upsamples = [nn.ConvTranspose2d(ch[i + 1], ch[i], 4, stride=2, padding=1, rng=rng)
                          for i in range(config.depth)]
        self.up_blocks = [ResBlock(2 * ch[i], ch[i], E, rng) for i in range(config.depth)]
        self.out_norm = nn.GroupNorm(_groups(ch[0]), ch[0])
        self.out_act = nn.SiLU()
        self.out_conv = nn.Conv2d(ch[0], config.latent_channels, 3, padding=1, rng=rng)

    def _check_inputs(self, z, t, y):
        c = self.config
        if z.ndim != 4 or z.shape[1:] != (c.latent_channels, c.latent_side, c.latent_side):
            raise ShapeError(
                f"expected latents (n, {c.latent_channels}, {c.latent_side}, {c.latent_side}), "
                f"got {z.shape}")
        n = z.shape[0]
        t = np.broadcast_to(np.asarray(t), (n,)).astype(np.int64)
        y = np.broadcast_to(np.asarray(y), (n,)).astype(np.intp)
        if n and (t.min() < 1 or (c.num_steps is not None and t.max() > c.num_steps)):
            raise ValueError(f"timesteps must lie in [1, {c.num_steps or 'T'}]")
        if n and (y.min() < 0 or y.max() >= c.class_count):
            raise ValueError(f"class labels must lie in [0, {c.class_count})")
        return t, y

    def forward(self, z, t, y):
        t, y = self._check_inputs(z, t, y)
        emb = self.time_mlp(sinusoidal_embedding(t, self.config.time_embed_dim))
        emb = emb + self.class_emb(y)
        h = self.in_conv(z)
        skips = []
        for block, down in zip(self.down_blocks, self.downsamples):
            h = block(h, emb)
            skips.append(h)
            h = down(h)
        h = self.mid_block(h, emb)
        for i in reversed(range(self.config.depth)):
            h = self.upsamples[i](h)
            h = self.up_blocks[i](np.concatenate([h, skips[i]], axis=1), emb)
        return self.out_conv(self.out_act(self.out_norm(h)))

    def backward(self, grad):
        """Backpropagate ``dL/d(output)``; returns ``dL/dz``."""
        dh = self.out_norm.backward(self.out_act.backward(self.out_conv.backward(grad)))
        demb = 0.0
        dskips = [None] * self.config.depth
        for i in range(self.config.depth):
            dcat, de = self.up_blocks[i].backward(dh)
            demb = demb + de
            c = self.config.channels[i]
            dskips[i] = dcat[:, c:]
            dh = self.upsamples[i].backward(dcat[:, :c])
        dh, de = self.mid_block.backward(dh)
        demb = demb + de
        for i in reversed(range(self.config.depth)):
            dh = self.downsamples[i].backward(dh) + dskips[i]
            dh, de = self.down_blocks[i].backward(dh)
            demb = demb + de
        dz = self.in_conv.backward(dh)
        self.time_mlp.backward(demb)
        self.class_emb.backward(demb)
        return dz

    predict_noise = forward


def build_unet(config, rng_seed=None):
    """Initialise a :class:`UNet` deterministically from ``rng_seed``."""
    net = UNet(config, rng=rng_seed)
    logger.info("built U-Net with %d parameters (bottleneck %dx%d)",
                net.num_parameters(), config.bottleneck_side, config.bottleneck_side)
    return net
