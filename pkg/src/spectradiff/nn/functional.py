"""Stateless array kernels with hand-written gradients.

All convolution routines work on batched ``(N, C, H, W)`` arrays with
``(C_out, C_in, kh, kw)`` kernels and use an im2col layout so the heavy
lifting happens in a single batched matmul.
"""

import numpy as np

from ..exceptions import ShapeError


def _pair(v):
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ValueError(f"expected an int or a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_output_shape(in_hw, kernel_hw, stride=1, padding=0):
    """Spatial output size of a cross-correlation."""
    (h, w), (kh, kw) = _pair(in_hw), _pair(kernel_hw)
    (sh, sw), (ph, pw) = _pair(stride), _pair(padding)
    return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1


def conv_transpose_output_shape(in_hw, kernel_hw, stride=1, padding=0):
    """Spatial output size of a transposed convolution."""
    (h, w), (kh, kw) = _pair(in_hw), _pair(kernel_hw)
    (sh, sw), (ph, pw) = _pair(stride), _pair(padding)
    return (h - 1) * sh - 2 * ph + kh, (w - 1) * sw - 2 * pw + kw


def _check_conv(x_shape, w_shape, stride, padding):
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ShapeError(
            f"conv expects 4-d input and kernels, got input {tuple(x_shape)} "
            f"and kernels {tuple(w_shape)}"
        )
    if x_shape[1] != w_shape[1]:
        raise ShapeError(
            f"input channels do not match kernels: input {tuple(x_shape)}, "
            f"kernels {tuple(w_shape)}"
        )
    ho, wo = conv_output_shape(x_shape[2:], w_shape[2:], stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"kernels larger than padded input: input {tuple(x_shape)}, "
            f"kernels {tuple(w_shape)}, stride {stride}, padding {padding}"
        )
    return ho, wo


def im2col(x, kernel_hw, stride=1, padding=0):
    """Unfold patches of ``x`` into ``(N, C*kh*kw, Ho*Wo)`` columns."""
    n, c, h, w = x.shape
    kh, kw = _pair(kernel_hw)
    (sh, sw), (ph, pw) = _pair(stride), _pair(padding)
    ho, wo = conv_output_shape((h, w), (kh, kw), stride, padding)
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
    return cols.reshape(n, c * kh * kw, ho * wo)


def col2im(cols, x_shape, kernel_hw, stride=1, padding=0):
    """Adjoint of :func:`im2col`: scatter-add columns back onto the input grid."""
    n, c, h, w = x_shape
    kh, kw = _pair(kernel_hw)
    (sh, sw), (ph, pw) = _pair(stride), _pair(padding)
    ho, wo = conv_output_shape((h, w), (kh, kw), stride, padding)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += cols[:, :, i, j]
    return out[:, :, ph:ph + h, pw:pw + w]


def conv2d(x, w, stride=1, padding=0, return_cols=False):
    """Batched 2-D cross-correlation (no bias)."""
    ho, wo = _check_conv(x.shape, w.shape, stride, padding)
    cols = im2col(x, w.shape[2:], stride, padding)
    out = np.matmul(w.reshape(w.shape[0], -1), cols)
    out = out.reshape(x.shape[0], w.shape[0], ho, wo)
    return (out, cols) if return_cols else out


def conv2d_grad_input(grad, w, x_shape, stride=1, padding=0):
    """Gradient of :func:`conv2d` with respect to its input."""
    n, o = grad.shape[:2]
    dcols = np.matmul(w.reshape(o, -1).T, grad.reshape(n, o, -1))
    return col2im(dcols, x_shape, w.shape[2:], stride, padding)


def conv2d_grad_weight(grad, cols, w_shape):
    """Gradient of :func:`conv2d` with respect to its kernels."""
    n, o = grad.shape[:2]
    dw = np.tensordot(grad.reshape(n, o, -1), cols, axes=([0, 2], [0, 2]))
    return dw.reshape(w_shape)


def conv_transpose2d(y, w, stride=1, padding=0):
    """Transposed convolution, the exact adjoint of :func:`conv2d` with kernels ``w``.

    ``w`` has shape ``(C_in, C_out, kh, kw)`` where ``C_in`` matches the
    channels of ``y``, i.e. the same tensor one would hand to ``conv2d`` to
    go the other way.
    """
    if y.ndim != 4 or w.ndim != 4 or y.shape[1] != w.shape[0]:
        raise ShapeError(
            f"transposed conv shape mismatch: input {tuple(y.shape)}, "
            f"kernels {tuple(w.shape)}"
        )
    h, wd = conv_transpose_output_shape(y.shape[2:], w.shape[2:], stride, padding)
    if h < 1 or wd < 1:
        raise ShapeError(
            f"transposed conv produces empty output: input {tuple(y.shape)}, "
            f"kernels {tuple(w.shape)}"
        )
    x_shape = (y.shape[0], w.shape[1], h, wd)
    if conv_output_shape((h, wd), w.shape[2:], stride, padding) != y.shape[2:]:
        raise ShapeError(
            f"transposed conv geometry is not invertible: input {tuple(y.shape)}, "
            f"kernels {tuple(w.shape)}"
        )
    return conv2d_grad_input(y, w, x_shape, stride, padding)


def sinusoidal_embedding(t, dim, max_period=10000.0):
    """Sinusoidal position encoding of (possibly fractional) timesteps.

    Returns an ``(len(t), dim)`` array: first half cosines, second half sines.
    Odd ``dim`` is zero-padded by one column.
    """
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb


def mse_loss(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to ``logits``."""
    labels = np.asarray(labels, dtype=np.intp)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
