"""Parameterized layers with explicit forward/backward passes.

Each layer caches whatever its backward pass needs during ``forward`` and
accumulates parameter gradients into ``Parameter.grad`` during ``backward``.
A layer instance is therefore used at most once per forward pass.
"""

import math

import numpy as np

from ..exceptions import ShapeError
from . import functional as F


class Parameter:
    """A trainable array together with its accumulated gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter(shape={self.value.shape})"


class Module:
    """Base class: discovers parameters and sub-modules from attributes."""

    def named_parameters(self, prefix=""):
        for name, attr in vars(self).items():
            if name.startswith("_"):
                continue
            path = f"{prefix}{name}"
            if isinstance(attr, Parameter):
                yield path, attr
            elif isinstance(attr, Module):
                yield from attr.named_parameters(path + ".")
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self):
        """Ordered ``{path: Parameter}`` map (the parameter store)."""
        return dict(self.named_parameters())

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def num_parameters(self):
        return sum(p.value.size for p in self.parameters().values())

    def astype(self, dtype):
        for p in self.parameters().values():
            p.value = p.value.astype(dtype)
            p.grad = np.zeros_like(p.value)
        return self

    def state_dict(self):
        return {k: p.value.copy() for k, p in self.parameters().items()}

    def load_state_dict(self, state):
        params = self.parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(
                f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
            )
        for k, p in params.items():
            value = np.asarray(state[k])
            if value.shape != p.value.shape:
                raise ShapeError(f"{k}: expected {p.value.shape}, got {value.shape}")
            p.value = value.astype(p.value.dtype, copy=True)
            p.grad = np.zeros_like(p.value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _he_normal(rng, shape, fan_in, gain=math.sqrt(2.0)):
    return rng.normal(0.0, gain / math.sqrt(fan_in), size=shape)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 bias=True, rng=None):
        rng = np.random.default_rng(rng)
        kh, kw = F._pair(kernel_size)
        self.stride, self.padding = stride, padding
        fan_in = in_channels * kh * kw
        self.weight = Parameter(_he_normal(rng, (out_channels, in_channels, kh, kw), fan_in))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x):
        out, cols = F.conv2d(x, self.weight.value, self.stride, self.padding, return_cols=True)
        self._cache = (x.shape, cols)
        if self.bias is not None:
            out += self.bias.value[None, :, None, None]
        return out

    def backward(self, grad):
        x_shape, cols = self._cache
        w = self.weight.value
        self.weight.grad += F.conv2d_grad_weight(grad, cols, w.shape)
        if self.bias is not None:
            self.bias.grad += grad.sum(axis=(0, 2, 3))
        return F.conv2d_grad_input(grad, w, x_shape, self.stride, self.padding)


class ConvTranspose2d(Module):
    """Transposed convolution; ``weight`` is ``(in_channels, out_channels, kh, kw)``."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 bias=True, rng=None):
        rng = np.random.default_rng(rng)
        kh, kw = F._pair(kernel_size)
        self.stride, self.padding = stride, padding
        # each output pixel sees roughly in_channels * k*k / stride^2 inputs
        sh, sw = F._pair(stride)
        fan_in = max(1, in_channels * kh * kw // (sh * sw))
        self.weight = Parameter(_he_normal(rng, (in_channels, out_channels, kh, kw), fan_in))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, y):
        self._y = y
        out = F.conv_transpose2d(y, self.weight.value, self.stride, self.padding)
        if self.bias is not None:
            out += self.bias.value[None, :, None, None]
        return out

    def backward(self, grad):
        y, w = self._y, self.weight.value
        # <tconv_w(y), g> = <y, conv_w(g)>
        dy, gcols = F.conv2d(grad, w, self.stride, self.padding, return_cols=True)
        self.weight.grad += F.conv2d_grad_weight(y, gcols, w.shape)
        if self.bias is not None:
            self.bias.grad += grad.sum(axis=(0, 2, 3))
        return dy


class Conv1d(Module):
    """1-D convolution over ``(N, C, L)`` inputs, routed through :class:`Conv2d`."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 bias=True, rng=None):
        self.conv = Conv2d(in_channels, out_channels, (1, kernel_size), (1, stride),
                           (0, padding), bias=bias, rng=rng)

    def forward(self, x):
        return self.conv.forward(x[:, :, None, :])[:, :, 0, :]

    def backward(self, grad):
        return self.conv.backward(grad[:, :, None, :])[:, :, 0, :]


class Linear(Module):
    def __init__(self, in_features, out_features, bias=True, rng=None):
        rng = np.random.default_rng(rng)
        self.weight = Parameter(rng.normal(0.0, 1.0 / math.sqrt(in_features),
                                           size=(out_features, in_features)))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x):
        self._x = x
        out = x @ self.weight.value.T
        if self.bias is not None:
            out = out + self.bias.value
        return out

    def backward(self, grad):
        self.weight.grad += grad.T @ self._x
        if self.bias is not None:
            self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.value


class Embedding(Module):
    """Lookup table for integer ids; gradients flow to the table only."""

    def __init__(self, num_embeddings, dim, rng=None, scale=None):
        rng = np.random.default_rng(rng)
        scale = 1.0 / num_embeddings if scale is None else scale
        self.weight = Parameter(rng.uniform(-scale, scale, size=(num_embeddings, dim)))

    def forward(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        n = self.weight.value.shape[0]
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexError(f"embedding index out of range [0, {n})")
        self._idx = idx
        return self.weight.value[idx]

    def backward(self, grad):
        np.add.at(self.weight.grad, self._idx, grad)
        return None


class ReLU(Module):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)


class SiLU(Module):
    def forward(self, x):
        s = 1.0 / (1.0 + np.exp(-x))
        self._x, self._s = x, s
        return x * s

    def backward(self, grad):
        x, s = self._x, self._s
        return grad * s * (1.0 + x * (1.0 - s))


class Sigmoid(Module):
    def forward(self, x):
        self._s = 1.0 / (1.0 + np.exp(-x))
        return self._s

    def backward(self, grad):
        return grad * self._s * (1.0 - self._s)


class GroupNorm(Module):
    """Group normalization over ``(N, C, ...)`` inputs with per-channel affine."""

    def __init__(self, num_groups, num_channels, eps=1e-5):
        if num_channels % num_groups:
            raise ShapeError(f"{num_channels} channels not divisible into {num_groups} groups")
        self.num_groups, self.eps = num_groups, eps
        self.weight = Parameter(np.ones(num_channels))
        self.bias = Parameter(np.zeros(num_channels))

    def forward(self, x):
        n, c = x.shape[:2]
        g = x.reshape(n, self.num_groups, -1)
        mean = g.mean(axis=2, keepdims=True)
        var = g.var(axis=2, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = ((g - mean) * inv_std).reshape(x.shape)
        self._xhat, self._inv_std = xhat, inv_std
        bshape = (1, c) + (1,) * (x.ndim - 2)
        return xhat * self.weight.value.reshape(bshape) + self.bias.value.reshape(bshape)

    def backward(self, grad):
        xhat, inv_std = self._xhat, self._inv_std
        n, c = grad.shape[:2]
        axes = (0,) + tuple(range(2, grad.ndim))
        self.weight.grad += (grad * xhat).sum(axis=axes)
        self.bias.grad += grad.sum(axis=axes)
        bshape = (1, c) + (1,) * (grad.ndim - 2)
        dxhat = (grad * self.weight.value.reshape(bshape)).reshape(n, self.num_groups, -1)
        xh = xhat.reshape(n, self.num_groups, -1)
        m = dxhat.shape[2]
        dx = inv_std / m * (m * dxhat - dxhat.sum(axis=2, keepdims=True)
                            - xh * (dxhat * xh).sum(axis=2, keepdims=True))
        return dx.reshape(grad.shape)


class GlobalAvgPool(Module):
    """Mean over every axis after the channel axis."""

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], x.shape[1], -1).mean(axis=2)

    def backward(self, grad):
        n, c = self._shape[:2]
        size = int(np.prod(self._shape[2:]))
        full = np.broadcast_to(grad[:, :, None] / size, (n, c, size))
        return full.reshape(self._shape).copy()


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad
