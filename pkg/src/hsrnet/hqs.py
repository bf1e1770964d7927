"""Classical half-quadratic-splitting solver with an explicit operator.

The degradation is blur (circular boundary) followed by s-fold
decimation; its adjoint is zero-upsampling followed by convolution with
the same kernel. Both sub-problems of the splitting are solved exactly
by conjugate gradient: the data half-step on the normal equations
(H^T H + beta I) x = H^T y + beta u, and the quadratic-smoothness
denoising half-step on (beta I + lambda D^T D) u = beta x.

Circular boundaries keep the adjoint exact, which the dot-product test
relies on; everything here runs on 2-D float64 arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConvergenceError
from .imaging import resize_array


def gaussian_kernel(size=9, sigma=1.5):
    """Normalized odd-sized Gaussian blur kernel."""
    if size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    coords = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


@dataclass
class DegradationOperator:
    """Explicit blur + decimate forward model (noise slot fixed at zero)."""

    kernel: np.ndarray
    scale: int
    noise_sigma: float = 0.0

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
            raise ValueError(f"blur kernel must be 2-D with odd dimensions, got {k.shape}")
        if abs(k.sum() - 1.0) > 1e-12:
            raise ValueError(f"blur kernel must sum to 1, got {k.sum()!r}")
        if self.scale < 1:
            raise ValueError(f"decimation factor must be >= 1, got {self.scale}")
        if self.noise_sigma != 0.0:
            raise ValueError("the noise slot is fixed at zero")
        self.kernel = k

    def apply(self, x_hr):
        """Blur (circular) then keep every s-th sample."""
        x_hr = np.asarray(x_hr, dtype=np.float64)
        if x_hr.shape[0] % self.scale or x_hr.shape[1] % self.scale:
            raise ValueError(f"HR shape {x_hr.shape} not divisible by scale {self.scale}")
        blurred = ndimage.correlate(x_hr, self.kernel, mode="wrap")
        return blurred[:: self.scale, :: self.scale]

    def adjoint(self, y_lr):
        """Zero-upsample then correlate with the flipped kernel."""
        y_lr = np.asarray(y_lr, dtype=np.float64)
        up = np.zeros((y_lr.shape[0] * self.scale, y_lr.shape[1] * self.scale))
        up[:: self.scale, :: self.scale] = y_lr
        return ndimage.convolve(up, self.kernel, mode="wrap")

    def normal_op(self, x_hr):
        return self.adjoint(self.apply(x_hr))


def grad_forward(x):
    """Forward differences with circular boundary: (rows, cols) pair."""
    return np.roll(x, -1, axis=0) - x, np.roll(x, -1, axis=1) - x


def grad_squared_op(x):
    """D^T D x for the circular forward-difference operator."""
    return (
        4.0 * x
        - np.roll(x, 1, axis=0)
        - np.roll(x, -1, axis=0)
        - np.roll(x, 1, axis=1)
        - np.roll(x, -1, axis=1)
    )


def objective(x, i_lr, op, lam):
    """0.5 ||y - Hx||^2 + (lam/2) ||Dx||^2 (sums of squares)."""
    residual = i_lr - op.apply(x)
    gr, gc = grad_forward(x)
    return 0.5 * float(np.sum(residual**2)) + 0.5 * lam * float(np.sum(gr**2) + np.sum(gc**2))


@dataclass
class HqsConfig:
    beta0: float = 0.01
    beta_growth: float = 4.0
    iterations: int = 8
    prior_weight: float = 0.02
    cg_tol: float = 1e-8
    cg_max_iter: int = 2000

    def __post_init__(self):
        if self.beta0 <= 0:
            raise ValueError(f"beta0 must be > 0, got {self.beta0}")
        if self.beta_growth <= 1:
            raise ValueError(f"beta_growth must be > 1, got {self.beta_growth}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.prior_weight < 0:
            raise ValueError(f"prior_weight must be >= 0, got {self.prior_weight}")

    def beta(self, k):
        return self.beta0 * self.beta_growth**k


@dataclass
class HqsState:
    x: np.ndarray
    u: np.ndarray
    k: int = 0
    history: list = field(default_factory=list)


def conjugate_gradient(apply_a, rhs, x0, tol, max_iter):
    """CG for SPD systems; relative-residual stopping rule."""
    rhs_norm = math.sqrt(float(np.sum(rhs * rhs)))
    if rhs_norm == 0.0:
        return np.zeros_like(rhs)
    x = x0.copy()
    r = rhs - apply_a(x)
    p = r.copy()
    rs = float(np.sum(r * r))
    for _ in range(max_iter):
        if math.sqrt(rs) <= tol * rhs_norm:
            return x
        ap = apply_a(p)
        alpha = rs / float(np.sum(p * ap))
        x += alpha * p
        r -= alpha * ap
        rs_next = float(np.sum(r * r))
        p = r + (rs_next / rs) * p
        rs = rs_next
    if math.sqrt(rs) <= tol * rhs_norm:
        return x
    raise ConvergenceError(
        f"CG did not converge within {max_iter} iterations "
        f"(relative residual {math.sqrt(rs) / rhs_norm:.3e})",
        residual=math.sqrt(rs) / rhs_norm,
    )


def ls_solve(i_lr, u, beta, op, tol=1e-8, max_iter=2000):
    """Minimizer of 0.5||y - Hx||^2 + (beta/2)||x - u||^2 via CG on the
    normal equations (H^T H + beta I) x = H^T y + beta u."""
    if beta <= 0:
        raise ValueError(f"ls_solve: beta must be > 0, got {beta}")
    rhs = op.adjoint(i_lr) + beta * u
    return conjugate_gradient(lambda v: op.normal_op(v) + beta * v, rhs, u, tol, max_iter)


def denoise_prox(x, beta, lam, tol=1e-8, max_iter=2000):
    """Minimizer of (beta/2)||x - u||^2 + (lam/2)||Du||^2; exact identity
    when lam is zero."""
    if beta <= 0:
        raise ValueError(f"denoise_prox: beta must be > 0, got {beta}")
    if lam < 0:
        raise ValueError(f"denoise_prox: lambda must be >= 0, got {lam}")
    if lam == 0.0:
        return x.copy()
    rhs = beta * x
    return conjugate_gradient(lambda v: beta * v + lam * grad_squared_op(v), rhs, x, tol, max_iter)


def hqs_run(i_lr, op, cfg=None):
    """Alternate the two half-steps for K rounds with the growing beta
    schedule, starting from the bicubic upscale of the observation.

    Returns the final estimate and the objective history, one
    (half_step, beta, objective) row per half-step (row 0 is the
    initialization).
    """
    cfg = cfg or HqsConfig()
    i_lr = np.asarray(i_lr, dtype=np.float64)
    x = resize_array(i_lr, float(op.scale), antialias=False)
    history = [(0, cfg.beta0, objective(x, i_lr, op, cfg.prior_weight))]
    u = x
    for k in range(cfg.iterations):
        beta = cfg.beta(k)
        x = ls_solve(i_lr, u, beta, op, cfg.cg_tol, cfg.cg_max_iter)
        history.append((2 * k + 1, beta, objective(x, i_lr, op, cfg.prior_weight)))
        u = denoise_prox(x, beta, cfg.prior_weight, cfg.cg_tol, cfg.cg_max_iter)
        history.append((2 * k + 2, beta, objective(u, i_lr, op, cfg.prior_weight)))
    return u, history


def history_csv(history):
    """Render the objective history as `step,beta,objective` CSV text."""
    lines = ["step,beta,objective"]
    for step, beta, obj in history:
        lines.append(f"{step},{beta!r},{obj!r}")
    return "\n".join(lines) + "\n"
