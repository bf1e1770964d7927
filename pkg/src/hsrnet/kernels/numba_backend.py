"""Numba-jitted convolution kernels (default backend).

Same contracts as numpy_backend: pre-padded inputs, no bias. Loops are
ordered so the innermost index walks contiguous memory.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(xp, w, stride):
    b, c, hp, wp = xp.shape
    oc, _, kh, kw = w.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    out = np.zeros((b, oc, oh, ow))
    for n in range(b):
        for o in range(oc):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for cc in range(c):
                        for u in range(kh):
                            base_h = i * stride + u
                            for v in range(kw):
                                acc += xp[n, cc, base_h, j * stride + v] * w[o, cc, u, v]
                    out[n, o, i, j] = acc
    return out


@njit(cache=True)
def conv2d_grad_weight(xp, g, stride, kh, kw):
    b, c, hp, wp = xp.shape
    _, oc, oh, ow = g.shape[0], g.shape[1], g.shape[2], g.shape[3]
    dw = np.zeros((oc, c, kh, kw))
    for o in range(oc):
        for n in range(b):
            for i in range(oh):
                for j in range(ow):
                    gv = g[n, o, i, j]
                    for cc in range(c):
                        for u in range(kh):
                            base_h = i * stride + u
                            for v in range(kw):
                                dw[o, cc, u, v] += gv * xp[n, cc, base_h, j * stride + v]
    return dw


@njit(cache=True)
def conv2d_grad_input(g, w, stride, hp, wp):
    b, oc, oh, ow = g.shape
    c, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    dxp = np.zeros((b, c, hp, wp))
    for n in range(b):
        for o in range(oc):
            for i in range(oh):
                for j in range(ow):
                    gv = g[n, o, i, j]
                    for cc in range(c):
                        for u in range(kh):
                            base_h = i * stride + u
                            for v in range(kw):
                                dxp[n, cc, base_h, j * stride + v] += gv * w[o, cc, u, v]
    return dxp
