"""Pure-numpy convolution kernels (fallback backend).

All three kernels operate on pre-padded inputs; padding and bias are
handled by the autodiff layer. Forward and weight-gradient go through
windowed tensordot (BLAS); the input gradient reuses the forward kernel
on a zero-dilated, rotated-weight problem.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _windows(xp, kh, kw, stride):
    b, c, hp, wp = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    sb, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(b, c, kh, kw, oh, ow),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
    )


def conv2d_forward(xp, w, stride):
    """Cross-correlate padded input (b,c,hp,wp) with w (oc,c,kh,kw)."""
    kh, kw = w.shape[2], w.shape[3]
    win = _windows(xp, kh, kw, stride)
    out = np.tensordot(w, win, axes=([1, 2, 3], [1, 2, 3]))  # (oc,b,oh,ow)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def conv2d_grad_weight(xp, g, stride, kh, kw):
    """d(sum g*out)/dw given upstream gradient g (b,oc,oh,ow)."""
    win = _windows(xp, kh, kw, stride)
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 4, 5]))


def conv2d_grad_input(g, w, stride, hp, wp):
    """Gradient w.r.t. the padded input, shape (b,c,hp,wp)."""
    b, oc, oh, ow = g.shape
    c, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    if stride > 1:
        gu = np.zeros((b, oc, (oh - 1) * stride + 1, (ow - 1) * stride + 1))
        gu[:, :, ::stride, ::stride] = g
    else:
        gu = g
    # full correlation with the 180-degree-rotated, channel-swapped weights
    wr = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gp = np.pad(gu, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    d = conv2d_forward(gp, wr, 1)
    if d.shape[2] == hp and d.shape[3] == wp:
        return d
    # rows/cols past the last window never contributed to the output
    full = np.zeros((b, c, hp, wp))
    full[:, :, : d.shape[2], : d.shape[3]] = d
    return full
