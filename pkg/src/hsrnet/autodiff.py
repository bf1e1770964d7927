"""Minimal reverse-mode autodiff over numpy arrays.

Tensors wrap float64 arrays (features are (batch, channels, height,
width)) and record a define-by-run tape. The op set is exactly what the
super-resolution network needs: convolution, LeakyReLU, sigmoid, max
pooling, bilinear upsampling, pixel shuffle, channel concat/split,
elementwise add/mul, reflect padding, cropping, and L1 loss. No
broadcasting beyond the convolution bias, no higher-order gradients.

Tensors are immutable after construction except for their ``grad``
buffer; ``backward`` accumulates, ``zero_grad`` resets.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the context (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _result(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss):
    """Accumulate d(loss)/dT into ``grad`` of every reachable tensor
    that requires gradients. Repeated calls keep accumulating."""
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


def _require_finite_free(name, arr):
    if not np.isfinite(arr).all():
        raise ValueError(f"{name}: non-finite values in input")


# ---------------------------------------------------------------------------
# ops


def conv2d(x, w, b, stride=1, pad=0):
    """2-D cross-correlation with zero padding and bias.

    x: (batch, in_ch, h, w); w: (out_ch, in_ch, kh, kw); b: (1, out_ch, 1, 1).
    Output spatial size is floor((dim + 2*pad - k)/stride) + 1.
    """
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if pad < 0:
        raise ValueError(f"conv2d: pad must be >= 0, got {pad}")
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d: expected 4-D input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(
            f"conv2d: input shape {x.shape} has {x.shape[1]} channels but "
            f"weight shape {w.shape} expects {w.shape[1]}"
        )
    oc, _, kh, kw = w.shape
    if b.shape != (1, oc, 1, 1):
        raise ValueError(f"conv2d: bias shape {b.shape} does not match (1, {oc}, 1, 1)")

    if pad:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = np.ascontiguousarray(x.data)
    hp, wp = xp.shape[2], xp.shape[3]
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    if hp < kh or wp < kw or oh <= 0 or ow <= 0:
        raise ValueError(
            f"conv2d: empty spatial output for input {x.shape}, kernel {w.shape}, "
            f"stride {stride}, pad {pad}"
        )

    out = kernels.conv2d_forward(xp, w.data, stride) + b.data
    h_in, w_in = x.shape[2], x.shape[3]

    def bw(g):
        g = np.ascontiguousarray(g)
        dx = None
        if x.requires_grad:
            dfull = kernels.conv2d_grad_input(g, w.data, stride, hp, wp)
            dx = dfull[:, :, pad : pad + h_in, pad : pad + w_in] if pad else dfull
        dw = kernels.conv2d_grad_weight(xp, g, stride, kh, kw) if w.requires_grad else None
        db = g.sum(axis=(0, 2, 3)).reshape(1, oc, 1, 1) if b.requires_grad else None
        return dx, dw, db

    return _result(out, (x, w, b), bw)


def leaky_relu(x, slope):
    """max(x, slope*x); the subgradient at 0 is taken as slope."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu: slope must be in (0, 1), got {slope}")
    positive = x.data > 0
    out = np.where(positive, x.data, slope * x.data)

    def bw(g):
        return (np.where(positive, g, slope * g),)

    return _result(out, (x,), bw)


def sigmoid(x):
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), bw)


def max_pool2d(x, k):
    """k-by-k max pooling with stride k; gradient goes to the first
    maximum in window scan order."""
    b, c, h, w = x.shape
    if h % k or w % k:
        raise ValueError(f"max_pool2d: spatial size {(h, w)} not divisible by {k}")
    oh, ow = h // k, w // k
    win = x.data.reshape(b, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, k * k)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros((b, c, oh, ow, k * k))
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(b, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (gx,)

    return _result(out, (x,), bw)


_bilinear_cache = {}


def _bilinear_matrix(n_in, factor):
    """Row-stochastic (n_in*factor, n_in) interpolation matrix using
    half-pixel centers with edge clamping."""
    key = (n_in, factor)
    m = _bilinear_cache.get(key)
    if m is None:
        n_out = n_in * factor
        m = np.zeros((n_out, n_in))
        for o in range(n_out):
            u = (o + 0.5) / factor - 0.5
            u = min(max(u, 0.0), n_in - 1.0)
            i0 = int(np.floor(u))
            i1 = min(i0 + 1, n_in - 1)
            t = u - i0
            m[o, i0] += 1.0 - t
            m[o, i1] += t
        _bilinear_cache[key] = m
    return m


def bilinear_upsample(x, factor):
    """Upscale spatial dims by an integer factor in {2, 4}."""
    if factor not in (2, 4):
        raise ValueError(f"bilinear_upsample: factor must be 2 or 4, got {factor}")
    _, _, h, w = x.shape
    mh = _bilinear_matrix(h, factor)
    mw = _bilinear_matrix(w, factor)

    def apply(arr, a, bm):
        t = np.tensordot(a, arr, axes=(1, 2))  # (oh, b, c, w)
        t = np.moveaxis(t, 0, 2)
        t = np.tensordot(bm, t, axes=(1, 3))  # (ow, b, c, oh)
        return np.ascontiguousarray(np.moveaxis(t, 0, 3))

    out = apply(x.data, mh, mw)

    def bw(g):
        return (apply(g, mh.T, mw.T),)

    return _result(out, (x,), bw)


def pixel_shuffle(x, r):
    """(b, c*r^2, h, w) -> (b, c, h*r, w*r); the r*r channel block of an
    output channel fills its sub-pixel grid in row-major order."""
    b, cr2, h, w = x.shape
    if cr2 % (r * r):
        raise ValueError(f"pixel_shuffle: {cr2} channels not divisible by r^2 = {r * r}")
    c = cr2 // (r * r)
    out = x.data.reshape(b, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, c, h * r, w * r)

    def bw(g):
        gx = g.reshape(b, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(b, cr2, h, w)
        return (np.ascontiguousarray(gx),)

    return _result(np.ascontiguousarray(out), (x,), bw)


def concat_channels(xs):
    xs = list(xs)
    first = xs[0].shape
    for x in xs[1:]:
        if (x.shape[0], x.shape[2], x.shape[3]) != (first[0], first[2], first[3]):
            raise ValueError(
                f"concat_channels: mismatched shapes {first} vs {x.shape}"
            )
    out = np.concatenate([x.data for x in xs], axis=1)
    splits = np.cumsum([x.shape[1] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=1))

    return _result(out, tuple(xs), bw)


def split_channels(x, parts):
    """Split into `parts` equal channel groups; concat restores x."""
    b, c, h, w = x.shape
    if c % parts:
        raise ValueError(f"split_channels: {c} channels not divisible by {parts}")
    step = c // parts
    outs = []
    for i in range(parts):
        lo = i * step

        def bw(g, lo=lo):
            gx = np.zeros((b, c, h, w))
            gx[:, lo : lo + step] = g
            return (gx,)

        outs.append(_result(np.ascontiguousarray(x.data[:, lo : lo + step]), (x,), bw))
    return outs


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    _check_same_shape("add", a, b)

    def bw(g):
        return g, g

    return _result(a.data + b.data, (a, b), bw)


def mul(a, b):
    _check_same_shape("mul", a, b)

    def bw(g):
        return g * b.data, g * a.data

    return _result(a.data * b.data, (a, b), bw)


def scale(x, c):
    def bw(g):
        return (g * c,)

    return _result(x.data * c, (x,), bw)


def tsum(x):
    """Sum of all elements, as a scalar tensor."""

    def bw(g):
        return (np.broadcast_to(g, x.shape).astype(np.float64),)

    return _result(np.asarray(x.data.sum()), (x,), bw)


def l1_loss(pred, target):
    """Mean absolute difference over all elements (scalar tensor)."""
    _check_same_shape("l1_loss", pred, target)
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        s = np.sign(diff) * (g / n)
        return s, -s

    return _result(np.asarray(np.abs(diff).mean()), (pred, target), bw)


def pad_reflect(x, pad_bottom, pad_right):
    """Reflect-pad the bottom/right spatial edges (no edge repeat)."""
    b, c, h, w = x.shape
    if pad_bottom >= h or pad_right >= w:
        raise ValueError(f"pad_reflect: padding {(pad_bottom, pad_right)} too large for {(h, w)}")
    if pad_bottom == 0 and pad_right == 0:
        return x
    rows = np.concatenate([np.arange(h), 2 * h - 2 - np.arange(h, h + pad_bottom)])
    cols = np.concatenate([np.arange(w), 2 * w - 2 - np.arange(w, w + pad_right)])
    out = x.data[:, :, rows][:, :, :, cols]

    def bw(g):
        tmp = np.zeros((b, c, h, w + pad_right))
        np.add.at(tmp, (slice(None), slice(None), rows), g)
        gx = np.zeros((b, c, h, w))
        np.add.at(gx, (slice(None), slice(None), slice(None), cols), tmp)
        return (gx,)

    return _result(np.ascontiguousarray(out), (x,), bw)


def crop2d(x, h, w):
    """Keep the top-left h-by-w spatial region."""
    b, c, hin, win_ = x.shape
    if h > hin or w > win_:
        raise ValueError(f"crop2d: target {(h, w)} exceeds input {(hin, win_)}")
    if h == hin and w == win_:
        return x

    def bw(g):
        gx = np.zeros((b, c, hin, win_))
        gx[:, :, :h, :w] = g
        return (gx,)

    return _result(np.ascontiguousarray(x.data[:, :, :h, :w]), (x,), bw)


# ---------------------------------------------------------------------------
# parameters and optimizer


@dataclass
class Parameter:
    """A named trainable tensor."""

    name: str
    value: Tensor
    trainable: bool = True


class ParameterStore:
    """Ordered, uniquely-named parameter collection.

    Names ending in ``.weight`` must be 4-D (out_ch, in_ch, kh, kw);
    names ending in ``.bias`` must be (1, out_ch, 1, 1).
    """

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def register(self, name, data, trainable=True):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.asarray(data, dtype=np.float64)
        if name.endswith(".weight") and arr.ndim != 4:
            raise ValueError(f"parameter {name!r}: conv weights must be 4-D, got {arr.shape}")
        if name.endswith(".bias") and (arr.ndim != 4 or arr.shape[0] != 1 or arr.shape[2:] != (1, 1)):
            raise ValueError(f"parameter {name!r}: bias must be (1, c, 1, 1), got {arr.shape}")
        p = Parameter(name, Tensor(arr, requires_grad=trainable), trainable)
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def parameters(self):
        return list(self._params.values())

    def total_size(self):
        return sum(p.value.size for p in self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.value.zero_grad()


@dataclass
class AdamState:
    """Bias-corrected Adam state for one parameter store."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state):
    """One Adam update over all trainable parameters.

    Gradients must be populated; they are left untouched (callers reset
    via ``params.zero_grad()``).
    """
    state.t += 1
    t = state.t
    for name, p in params.items():
        if not p.trainable:
            continue
        g = p.value.grad
        if g is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.value.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.value.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p.value.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
