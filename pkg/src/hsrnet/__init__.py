"""Self-contained super-resolution toolkit.

An iterative network unrolling half-quadratic splitting (solver and
denoiser stages in a learned low-resolution feature space), built on a
minimal autodiff engine, together with a classical HQS reference
solver, the bicubic degradation pipeline, and evaluation metrics.
"""

from .autodiff import AdamState, Parameter, ParameterStore, Tensor, adam_step, backward, no_grad
from .hqs import DegradationOperator, HqsConfig, denoise_prox, hqs_run, ls_solve, objective
from .imaging import Image, bicubic_resize, load, rgb_to_lab, rgb_to_y, save
from .metrics import EvalReport, EvalRow, LssParams, lss_at, lss_image, plcc, psnr, srcc, ssim
from .network import HsrConfig, build_weights, hsrnet_forward, param_count
from .training import TrainConfig, build_pairs, load_checkpoint, sample_batch, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "DegradationOperator",
    "EvalReport",
    "EvalRow",
    "HqsConfig",
    "HsrConfig",
    "Image",
    "LssParams",
    "Parameter",
    "ParameterStore",
    "Tensor",
    "TrainConfig",
    "adam_step",
    "backward",
    "bicubic_resize",
    "build_pairs",
    "build_weights",
    "denoise_prox",
    "hqs_run",
    "hsrnet_forward",
    "load",
    "load_checkpoint",
    "ls_solve",
    "lss_at",
    "lss_image",
    "no_grad",
    "objective",
    "param_count",
    "plcc",
    "psnr",
    "rgb_to_lab",
    "rgb_to_y",
    "sample_batch",
    "save",
    "save_checkpoint",
    "srcc",
    "ssim",
    "train",
]
