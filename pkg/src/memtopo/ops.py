"""Dense tensor operations with manual forward/backward passes.

Everything is float64 numpy with deterministic (ordered) reductions, so
forward and backward are bit-reproducible for identical inputs. Convolution
is valid cross-correlation, stride 1, no padding, no bias anywhere.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, DimensionError


def im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Extract (kh, kw) patches: (N, C, H, W) -> (N, H', W', C*kh*kw).

    Patch elements are flattened in (C, kh, kw) order to match kernels
    reshaped as (O, C*kh*kw).
    """
    if x.ndim != 4:
        raise DimensionError(f"expected NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    if h < kh or w < kw:
        raise DimensionError(f"spatial dims {h}x{w} smaller than kernel {kh}x{kw}")
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    # (N, C, H', W', kh, kw) -> (N, H', W', C, kh, kw)
    patches = windows.transpose(0, 2, 3, 1, 4, 5)
    return patches.reshape(n, h - kh + 1, w - kw + 1, c * kh * kw).copy()


def col2im(dpatches: np.ndarray, x_shape, kh: int, kw: int) -> np.ndarray:
    """Scatter-add patch gradients back onto the input grid."""
    n, c, h, w = x_shape
    hp, wp = h - kh + 1, w - kw + 1
    dp = dpatches.reshape(n, hp, wp, c, kh, kw)
    dx = np.zeros(x_shape, dtype=np.float64)
    for u in range(kh):
        for v in range(kw):
            dx[:, :, u:u + hp, v:v + wp] += dp[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    return dx


def conv2d_forward(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of (N, C, H, W) with kernels (O, C, kh, kw)."""
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError("conv2d expects 4-D input and kernel")
    n, c, h, w = x.shape
    o, ck, kh, kw = k.shape
    if ck != c:
        raise DimensionError(f"channel mismatch: input {c}, kernel {ck}")
    patches = im2col(x, kh, kw)
    out = patches @ k.reshape(o, -1).T  # (N, H', W', O)
    return out.transpose(0, 3, 1, 2)


def conv2d_backward(x: np.ndarray, k: np.ndarray,
                    dy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients (dx, dk) of conv2d_forward."""
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    hp, wp = h - kh + 1, w - kw + 1
    if dy.shape != (n, o, hp, wp):
        raise DimensionError(
            f"upstream gradient shape {dy.shape} != {(n, o, hp, wp)}")
    patches = im2col(x, kh, kw).reshape(n * hp * wp, -1)
    dy_flat = dy.transpose(0, 2, 3, 1).reshape(n * hp * wp, o)
    dk = (dy_flat.T @ patches).reshape(o, c, kh, kw)
    dpatches = dy_flat @ k.reshape(o, -1)
    dx = col2im(dpatches, x.shape, kh, kw)
    return dx, dk


def maxpool2x2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2/stride-2 block maxima; returns (y, argmax) for the backward pass.

    Ties break to the first index in row-major scan order within each block.
    """
    if x.ndim != 4:
        raise DimensionError(f"expected NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2x2 requires even spatial dims, got {h}x{w}")
    blocks = (x.reshape(n, c, h // 2, 2, w // 2, 2)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, h // 2, w // 2, 4))
    argmax = np.argmax(blocks, axis=-1)
    y = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    return y, argmax


def maxpool2x2_backward(dy: np.ndarray, argmax: np.ndarray,
                        x_shape) -> np.ndarray:
    """Route dy to the stored argmax positions, zero elsewhere."""
    n, c, h, w = x_shape
    if dy.shape != (n, c, h // 2, w // 2):
        raise DimensionError(f"upstream gradient shape {dy.shape} invalid")
    dblocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=np.float64)
    np.put_along_axis(dblocks, argmax[..., None], dy[..., None], axis=-1)
    return (dblocks.reshape(n, c, h // 2, w // 2, 2, 2)
                   .transpose(0, 1, 2, 4, 3, 5)
                   .reshape(n, c, h, w))


def fc_forward(x: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Dense product, no bias: (N, in) x (out, in) -> (N, out)."""
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise DimensionError(f"fc shapes incompatible: x {x.shape}, W {W.shape}")
    return x @ W.T


def fc_backward(x: np.ndarray, W: np.ndarray,
                dy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if dy.shape != (x.shape[0], W.shape[0]):
        raise DimensionError(f"upstream gradient shape {dy.shape} invalid")
    return dy @ W, dy.T @ x


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (x > 0.0)


def tanh_forward(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Backward from the forward *output* y = tanh(x)."""
    return dy * (1.0 - y * y)


def crop_to_even_forward(x: np.ndarray) -> np.ndarray:
    """Drop the last row/column when a spatial dim is odd."""
    if x.ndim != 4:
        raise DimensionError(f"expected NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    return x[:, :, :h - h % 2, :w - w % 2]


def crop_to_even_backward(dy: np.ndarray, x_shape) -> np.ndarray:
    dx = np.zeros(x_shape, dtype=np.float64)
    dx[:, :, :dy.shape[2], :dy.shape[3]] = dy
    return dx


def rnn_step(x_t: np.ndarray, h_prev: np.ndarray, W_ih: np.ndarray,
             W_hh: np.ndarray) -> np.ndarray:
    """h_t = tanh(W_ih x_t + W_hh h_(t-1)); the caller supplies h_0 = 0."""
    if x_t.shape[-1] != W_ih.shape[1] or h_prev.shape[-1] != W_hh.shape[1]:
        raise DimensionError(
            f"rnn_step shapes incompatible: x {x_t.shape}, h {h_prev.shape}, "
            f"W_ih {W_ih.shape}, W_hh {W_hh.shape}")
    return np.tanh(x_t @ W_ih.T + h_prev @ W_hh.T)


def rnn_average(hidden_states) -> np.ndarray:
    """Arithmetic mean of the hidden states over all time steps."""
    hs = list(hidden_states)
    if not hs:
        raise ArgumentError("rnn_average needs at least one hidden state")
    acc = np.zeros_like(hs[0])
    for h in hs:
        acc += h
    return acc / len(hs)


def softmax_xent_forward(logits: np.ndarray,
                         labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stabilized cross-entropy. Returns per-sample losses and softmax probs."""
    if logits.ndim != 2:
        raise DimensionError(f"expected (N, classes) logits, got {logits.shape}")
    labels = np.asarray(labels)
    n, classes = logits.shape
    if labels.shape != (n,) or np.any(labels < 0) or np.any(labels >= classes):
        raise ArgumentError("labels must be integers in [0, classes)")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    losses = logsumexp - shifted[np.arange(n), labels]
    probs = np.exp(shifted - logsumexp[:, None])
    return losses, probs


def softmax_xent_backward(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample dL/dlogits = softmax - onehot."""
    dlogits = probs.copy()
    dlogits[np.arange(probs.shape[0]), labels] -= 1.0
    return dlogits
