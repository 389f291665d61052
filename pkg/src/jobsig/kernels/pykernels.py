"""Pure-numpy kernels for the 3x3 same-padding conv and 2x2 max pooling.

These mirror the compiled kernels in ``_ckernels`` exactly, including
accumulation order and argmax tie-breaking, so both backends produce
bit-identical results and can be swapped freely.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col3x3(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N, C*9, H*W) patch matrix with zero padding of 1."""
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1 : h + 1, 1 : w + 1] = x
    s = xp.strides
    windows = as_strided(
        xp,
        shape=(n, c, 3, 3, h, w),
        strides=(s[0], s[1], s[2], s[3], s[2], s[3]),
    )
    return windows.reshape(n, c * 9, h * w)


def col2im3x3(dcols: np.ndarray, height: int, width: int) -> np.ndarray:
    """Adjoint of im2col3x3: scatter-add patches back to (N, C, H, W)."""
    n = dcols.shape[0]
    c = dcols.shape[1] // 9
    d = dcols.reshape(n, c, 3, 3, height, width)
    out = np.zeros((n, c, height + 2, width + 2), dtype=dcols.dtype)
    for ky in range(3):
        for kx in range(3):
            out[:, :, ky : ky + height, kx : kx + width] += d[:, :, ky, kx]
    return np.ascontiguousarray(out[:, :, 1 : height + 1, 1 : width + 1])


def maxpool2x2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2/stride-2 max pool with floor sizing.

    Returns the pooled array and the uint8 argmax index (0..3, scanning the
    window row-major; ties keep the first maximum).
    """
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    win = (
        x[:, :, : ho * 2, : wo * 2]
        .reshape(n, c, ho, 2, wo, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, ho, wo, 4)
    )
    idx = win.argmax(axis=-1).astype(np.uint8)
    y = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2x2_backward(
    dy: np.ndarray, idx: np.ndarray, height: int, width: int
) -> np.ndarray:
    """Route pooled gradients back to the argmax positions of the input."""
    n, c, ho, wo = dy.shape
    flat = np.zeros((n, c, ho, wo, 4), dtype=dy.dtype)
    np.put_along_axis(flat, idx[..., None].astype(np.intp), dy[..., None], axis=-1)
    dx = np.zeros((n, c, height, width), dtype=dy.dtype)
    dx[:, :, : ho * 2, : wo * 2] = (
        flat.reshape(n, c, ho, wo, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, ho * 2, wo * 2)
    )
    return dx
