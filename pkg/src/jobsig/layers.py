"""Forward/backward building blocks for the signature classifier.

Convolutions are im2col + GEMM; the data-movement kernels come from
``jobsig.kernels`` (compiled core with numpy fallback), the GEMM itself is
numpy/BLAS on both backends.  All functions are dtype-generic: float32 for
training speed, float64 in the gradient-check harness.
"""

from __future__ import annotations

import numpy as np

from . import kernels


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3x3 same-padding convolution.

    x: (N, C, H, W); w: (F, C, 3, 3); b: (F,).  Returns (y, cache) with
    y: (N, F, H, W).
    """
    n, c, h, wd = x.shape
    f = w.shape[0]
    cols = kernels.im2col3x3(x)                      # (N, C*9, H*W)
    wmat = w.reshape(f, c * 9)
    y = np.matmul(wmat, cols) + b[None, :, None]     # (N, F, H*W)
    return y.reshape(n, f, h, wd), (cols, x.shape)


def conv2d_backward(dy: np.ndarray, w: np.ndarray, cache):
    cols, x_shape = cache
    n, c, h, wd = x_shape
    f = w.shape[0]
    dy_mat = dy.reshape(n, f, h * wd)
    dw = np.matmul(dy_mat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = dy_mat.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(f, c * 9).T, dy_mat)  # (N, C*9, H*W)
    dx = kernels.col2im3x3(np.ascontiguousarray(dcols), h, wd)
    return dx, dw, db


def maxpool_forward(x: np.ndarray):
    y, idx = kernels.maxpool2x2(x)
    return y, (idx, x.shape)


def maxpool_backward(dy: np.ndarray, cache):
    idx, x_shape = cache
    return kernels.maxpool2x2_backward(np.ascontiguousarray(dy), idx, x_shape[2], x_shape[3])


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0), x


def relu_backward(dy: np.ndarray, cache):
    return dy * (cache > 0)


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """x: (N, D); w: (D, U); b: (U,)."""
    return x @ w + b, x


def dense_backward(dy: np.ndarray, w: np.ndarray, cache):
    x = cache
    dw = x.T @ dy
    db = dy.sum(axis=0)
    dx = dy @ w.T
    return dx, dw, db


def dropout_forward(x: np.ndarray, rate: float, rng: np.random.Generator):
    """Inverted dropout: scales kept activations so inference needs no rescale."""
    if rate <= 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale = x.dtype.type(1.0 / (1.0 - rate))
    mask = keep * scale
    return x * mask, mask


def dropout_backward(dy: np.ndarray, mask):
    if mask is None:
        return dy
    return dy * mask


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, numerically stabilized."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs: np.ndarray, onehot: np.ndarray) -> float:
    """Mean categorical cross-entropy over the batch."""
    eps = np.finfo(probs.dtype).tiny
    per_sample = -(onehot * np.log(np.maximum(probs, eps))).sum(axis=1)
    return float(per_sample.mean())


def softmax_cross_entropy_grad(probs: np.ndarray, onehot: np.ndarray) -> np.ndarray:
    """d(mean CE)/d(logits) for softmax outputs."""
    return (probs - onehot) / probs.dtype.type(probs.shape[0])
