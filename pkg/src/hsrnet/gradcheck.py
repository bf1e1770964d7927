"""Finite-difference oracle for every differentiable op.

Central differences in float64 with step 1e-5, compared against the
tape's analytic gradients. Random cases avoid kink neighbourhoods
(LeakyReLU near 0, pooling ties, L1 near equality) so the comparison is
mathematically meaningful. Used by the test suite and `hsr gradcheck`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

STEP = 1e-5
TOLERANCE = 1e-4
CASES_PER_OP = 20


def numeric_gradient(fn, leaf, step=STEP):
    """d fn / d leaf.data by central differences; fn() returns a float."""
    grad = np.zeros_like(leaf.data)
    flat = leaf.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = fn()
        flat[i] = orig - step
        f_minus = fn()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def check_gradients(build, leaves, step=STEP):
    """Max relative gradient error of scalar-valued build() over leaves.

    build() must construct the graph fresh from the leaf tensors each
    call and return a scalar Tensor.
    """
    for leaf in leaves:
        leaf.zero_grad()
    ad.backward(build())
    worst = 0.0
    for leaf in leaves:
        numeric = numeric_gradient(lambda: float(build().data), leaf, step)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        denom = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-6)
        worst = max(worst, np.abs(analytic - numeric).max() / denom)
    return worst


def _rand(rng, shape, lo=-1.0, hi=1.0):
    return ad.Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _rand_away_from_zero(rng, shape, margin=0.2):
    signs = rng.choice([-1.0, 1.0], size=shape)
    return ad.Tensor(signs * rng.uniform(margin, 1.5, shape), requires_grad=True)


def _rand_distinct(rng, shape, gap=0.05):
    # permuted grid: pairwise gaps >= gap, so pooling argmax is FD-stable
    n = int(np.prod(shape))
    vals = rng.permutation(n).astype(np.float64) * gap
    return ad.Tensor(vals.reshape(shape), requires_grad=True)


def _case_conv2d(rng):
    x = _rand(rng, (2, 2, 5, 5))
    w = _rand(rng, (3, 2, 3, 3))
    b = _rand(rng, (1, 3, 1, 1))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    return lambda: ad.tsum(ad.conv2d(x, w, b, stride=stride, pad=pad)), [x, w, b]


def _case_leaky_relu(rng):
    x = _rand_away_from_zero(rng, (1, 3, 4, 4))
    return lambda: ad.tsum(ad.mul(ad.leaky_relu(x, 0.1), x)), [x]


def _case_sigmoid(rng):
    x = _rand(rng, (1, 2, 4, 5), -3.0, 3.0)
    return lambda: ad.tsum(ad.mul(ad.sigmoid(x), x)), [x]


def _case_max_pool(rng):
    x = _rand_distinct(rng, (1, 2, 4, 6))
    y = _rand(rng, (1, 2, 2, 3))
    return lambda: ad.tsum(ad.mul(ad.max_pool2d(x, 2), y)), [x]


def _case_bilinear(rng):
    factor = int(rng.choice([2, 4]))
    x = _rand(rng, (1, 2, 3, 4))
    y = _rand(rng, (1, 2, 3 * factor, 4 * factor))
    return lambda: ad.tsum(ad.mul(ad.bilinear_upsample(x, factor), y)), [x]


def _case_pixel_shuffle(rng):
    x = _rand(rng, (1, 8, 3, 2))
    y = _rand(rng, (1, 2, 6, 4))
    return lambda: ad.tsum(ad.mul(ad.pixel_shuffle(x, 2), y)), [x]


def _case_concat_split(rng):
    a = _rand(rng, (1, 2, 3, 3))
    b = _rand(rng, (1, 4, 3, 3))
    y = _rand(rng, (1, 2, 3, 3))

    def build():
        parts = ad.split_channels(ad.concat_channels([a, b]), 3)
        return ad.tsum(ad.mul(parts[1], y))

    return build, [a, b]


def _case_add_mul(rng):
    a = _rand(rng, (2, 2, 3, 3))
    b = _rand(rng, (2, 2, 3, 3))
    return lambda: ad.tsum(ad.mul(ad.add(a, b), a)), [a, b]


def _case_l1_loss(rng):
    pred = _rand(rng, (1, 2, 4, 4))
    offs = rng.choice([-1.0, 1.0], size=(1, 2, 4, 4)) * rng.uniform(0.1, 1.0, (1, 2, 4, 4))
    target = ad.Tensor(pred.data + offs, requires_grad=True)
    return lambda: ad.l1_loss(pred, target), [pred, target]


def _case_pad_crop(rng):
    x = _rand(rng, (1, 2, 5, 6))
    y = _rand(rng, (1, 2, 4, 5))
    return lambda: ad.tsum(ad.mul(ad.crop2d(ad.pad_reflect(x, 2, 1), 4, 5), y)), [x]


OP_CASES = {
    "conv2d": _case_conv2d,
    "leaky_relu": _case_leaky_relu,
    "sigmoid": _case_sigmoid,
    "max_pool2d": _case_max_pool,
    "bilinear_upsample": _case_bilinear,
    "pixel_shuffle": _case_pixel_shuffle,
    "concat_split": _case_concat_split,
    "add_mul": _case_add_mul,
    "l1_loss": _case_l1_loss,
    "pad_reflect_crop": _case_pad_crop,
}


@dataclass
class OpCheck:
    name: str
    cases: int
    max_rel_err: float
    passed: bool
    seconds: float


def run_suite(seed=0, cases=CASES_PER_OP, tolerance=TOLERANCE):
    """Finite-difference check of every op; one result row per op."""
    results = []
    for name, make_case in OP_CASES.items():
        rng = np.random.default_rng([seed, abs(hash(name)) % (2**32)])
        start = time.perf_counter()
        worst = 0.0
        for _ in range(cases):
            build, leaves = make_case(rng)
            worst = max(worst, check_gradients(build, leaves))
        elapsed = time.perf_counter() - start
        results.append(OpCheck(name, cases, worst, worst < tolerance, elapsed))
    return results
