"""Numpy reference kernels for 3x3 same-padding convolution and 2x2 max pooling.

Every function here has a Cython twin in ``_ckernels.pyx`` with the same
signature and bit-identical results.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col3x3(x):
    """Unfold an NHWC batch into rows of 3x3xC patches (zero padded)."""
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # n, h, w, c, 3, 3
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(n * h * w, 9 * c)


def col2im3x3(dcols, n, h, w, c):
    """Adjoint of :func:`im2col3x3`: scatter-add patch gradients back."""
    d = dcols.reshape(n, h, w, 3, 3, c)
    dxp = np.zeros((n, h + 2, w + 2, c))
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + h, j:j + w, :] += d[:, :, :, i, j, :]
    return np.ascontiguousarray(dxp[:, 1:-1, 1:-1, :])


def maxpool2x2_fwd(x):
    """Return pooled output and the winning window slot (0..3, row-major)."""
    n, h, w, c = x.shape
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    win = win.reshape(n, h // 2, w // 2, c, 4)
    arg = np.argmax(win, axis=-1).astype(np.int8)
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2x2_bwd(g, arg):
    n, ho, wo, c = g.shape
    slots = np.zeros((n, ho, wo, c, 4))
    np.put_along_axis(slots, arg[..., None].astype(np.intp), g[..., None], axis=-1)
    dx = slots.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(dx.reshape(n, 2 * ho, 2 * wo, c))
