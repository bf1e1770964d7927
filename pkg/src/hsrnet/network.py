"""The iterative super-resolution network.

An entry convolution moves the LR image into a feature space at LR
resolution; a two-conv transposition module produces the back-projected
feature; then K rounds alternate a three-conv least-squares solver stage
with a denoiser made of N blocks (multi-level spatial attention followed
by a hierarchical exploration block) and a tail convolution. A final
conv + pixel shuffle leaves the feature space at the target scale.

All iterations share one solver/denoiser weight set unless
``share_iter_weights`` is disabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad

# fan-in scaled uniform init: U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero biases
INIT_GAIN = 6.0
# fusion/tail/upscale convs start 10x smaller so the residual blocks are
# near-identity and the unrolled iterations keep feature magnitudes stable
INIT_CLOSER_SCALE = 0.1


@dataclass
class HsrConfig:
    channels: int = 64
    n_blocks: int = 10
    iterations: int = 3
    scale: int = 4
    leaky_slope: float = 0.1
    msa_enabled: bool = True
    msa_mode: str = "gate"  # "gate": input * attention; "additive": input + attention
    heb_branches: int = 4
    msa_levels: int = 3
    share_iter_weights: bool = True

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be one of 2, 3, 4, got {self.scale}")
        if self.channels % 16:
            raise ValueError(f"channels must be divisible by 16, got {self.channels}")
        if self.n_blocks < 1:
            raise ValueError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError(f"leaky_slope must be in (0, 1), got {self.leaky_slope}")
        if self.heb_branches != 4:
            raise ValueError("heb_branches is fixed at 4")
        if self.msa_levels != 3:
            raise ValueError("msa_levels is fixed at 3")
        if self.msa_mode not in ("gate", "additive"):
            raise ValueError(f"msa_mode must be 'gate' or 'additive', got {self.msa_mode!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        fields = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - fields
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# parameter layout


def _conv_shapes(prefix, out_ch, in_ch, k):
    yield f"{prefix}.weight", (out_ch, in_ch, k, k)
    yield f"{prefix}.bias", (1, out_ch, 1, 1)


def _msa_shapes(prefix, cfg):
    c = cfg.channels
    cb = c // 4
    yield from _conv_shapes(f"{prefix}.entry", 3 * cb, c, 1)
    for level in range(3):
        yield from _conv_shapes(f"{prefix}.level{level}.explore", cb, cb, 3)
    yield from _conv_shapes(f"{prefix}.fuse", c, 3 * cb, 1)


def _heb_shapes(prefix, cfg):
    c = cfg.channels
    cb = c // 4
    yield from _conv_shapes(f"{prefix}.entry", c, c, 3)
    for branch in range(2, 5):
        for stage in range(branch - 1):
            yield from _conv_shapes(f"{prefix}.branch{branch}.explore{stage}", cb, cb, 3)
        yield from _conv_shapes(f"{prefix}.branch{branch}.fuse", cb, 2 * cb, 1)
    yield from _conv_shapes(f"{prefix}.fuse", c, c, 3)


def _iteration_shapes(prefix, cfg):
    c = cfg.channels
    yield from _conv_shapes(f"{prefix}solver.conv0", c, 2 * c, 3)
    yield from _conv_shapes(f"{prefix}solver.conv1", c, c, 3)
    yield from _conv_shapes(f"{prefix}solver.conv2", c, c, 3)
    for n in range(cfg.n_blocks):
        if cfg.msa_enabled:
            yield from _msa_shapes(f"{prefix}denoiser.block{n}.msa", cfg)
        yield from _heb_shapes(f"{prefix}denoiser.block{n}.heb", cfg)
    yield from _conv_shapes(f"{prefix}denoiser.tail", c, c, 3)


def parameter_shapes(cfg):
    """All (name, shape) pairs, the single source of truth for layout."""
    c = cfg.channels
    yield from _conv_shapes("entry", c, 3, 3)
    yield from _conv_shapes("trans.conv0", c, c, 3)
    yield from _conv_shapes("trans.conv1", c, c, 3)
    if cfg.share_iter_weights:
        yield from _iteration_shapes("", cfg)
    else:
        for k in range(cfg.iterations):
            yield from _iteration_shapes(f"iter{k}.", cfg)
    yield from _conv_shapes("upscale.conv", 3 * cfg.scale**2, c, 3)


def param_count(cfg):
    """Exact scalar parameter count plus a per-module breakdown."""
    total = 0
    breakdown = {}
    for name, shape in parameter_shapes(cfg):
        n = math.prod(shape)
        total += n
        top = name.split(".", 1)[0]
        breakdown[top] = breakdown.get(top, 0) + n
    return total, breakdown


def build_weights(cfg, seed=0):
    """Freshly initialised parameter store for a configuration."""
    rng = np.random.default_rng(seed)
    store = ad.ParameterStore()
    for name, shape in parameter_shapes(cfg):
        if name.endswith(".bias"):
            store.register(name, np.zeros(shape))
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            bound = math.sqrt(INIT_GAIN / fan_in)
            values = rng.uniform(-bound, bound, shape)
            tail = name.rsplit(".", 2)[-2]
            if tail in ("fuse", "tail") or name.startswith("upscale"):
                values *= INIT_CLOSER_SCALE
            store.register(name, values)
    return store


# ---------------------------------------------------------------------------
# forward modules


def _act(x, cfg):
    return ad.leaky_relu(x, cfg.leaky_slope)


def _conv(store, name, x):
    w = store[name + ".weight"].value
    b = store[name + ".bias"].value
    k = w.shape[2]
    return ad.conv2d(x, w, b, stride=1, pad=(k - 1) // 2)


def feature_extract(img, store, cfg):
    """3-channel image to `channels`-wide feature at the same resolution."""
    if img.shape[1] != 3:
        raise ValueError(f"feature_extract: expected 3 input channels, got {img.shape}")
    return _conv(store, "entry", img)


def transposition(feat, store, cfg):
    x = _conv(store, "trans.conv0", feat)
    x = _act(x, cfg)
    return _conv(store, "trans.conv1", x)


def solver_ls(ht_i, u, store, cfg, prefix=""):
    """Least-squares stage: concat the back-projected feature with the
    current denoised estimate, then three convs with one LeakyReLU."""
    if ht_i.shape != u.shape:
        raise ValueError(f"solver_ls: shape mismatch {ht_i.shape} vs {u.shape}")
    x = ad.concat_channels([ht_i, u])
    x = _conv(store, f"{prefix}solver.conv0", x)
    x = _act(x, cfg)
    x = _conv(store, f"{prefix}solver.conv1", x)
    return _conv(store, f"{prefix}solver.conv2", x)


def heb_forward(f_in, store, prefix, cfg, record=None, record_key=None):
    """Hierarchical exploration block.

    Explore, split into four equal branches; branch i passes through
    (i-1) conv+LeakyReLU stages and is fused with its predecessor; a
    residual connection closes the block.
    """
    if f_in.shape[1] % 4:
        raise ValueError(f"heb_forward: channels {f_in.shape[1]} not divisible by 4")
    feat = _act(_conv(store, f"{prefix}.entry", f_in), cfg)
    parts = ad.split_channels(feat, 4)
    branch_outs = [parts[0]]
    for i in range(2, 5):
        explored = parts[i - 1]
        for stage in range(i - 1):
            explored = _act(_conv(store, f"{prefix}.branch{i}.explore{stage}", explored), cfg)
        fused = _conv(store, f"{prefix}.branch{i}.fuse", ad.concat_channels([explored, branch_outs[-1]]))
        branch_outs.append(fused)
    if record is not None and record_key is not None:
        for i, out in enumerate(branch_outs, start=1):
            record[f"heb_branch.{record_key}.{i}"] = out.data
    return ad.add(f_in, _conv(store, f"{prefix}.fuse", ad.concat_channels(branch_outs)))


def msa_forward(f_in, store, prefix, cfg, record=None, record_key=None):
    """Multi-level spatial attention.

    Three equal branches explored at full, half, and quarter resolution
    (max pool down, conv+LeakyReLU, bilinear back up) fuse into a
    sigmoid attention map that gates the block input.
    """
    h, w = f_in.shape[2], f_in.shape[3]
    if h % 4 or w % 4:
        raise ValueError(f"msa_forward: spatial size {(h, w)} not divisible by 4")
    parts = ad.split_channels(_conv(store, f"{prefix}.entry", f_in), 3)
    levels = []
    for level, part in enumerate(parts):
        factor = 2**level
        x = part if factor == 1 else ad.max_pool2d(part, factor)
        x = _act(_conv(store, f"{prefix}.level{level}.explore", x), cfg)
        if factor != 1:
            x = ad.bilinear_upsample(x, factor)
        levels.append(x)
    if record is not None and record_key is not None:
        for j, lv in enumerate(levels, start=1):
            record[f"msa_level.{record_key}.{j}"] = lv.data
    attention = ad.sigmoid(_conv(store, f"{prefix}.fuse", ad.concat_channels(levels)))
    if cfg.msa_mode == "gate":
        return ad.mul(f_in, attention)
    return ad.add(f_in, attention)


def denoiser_forward(i_hr, store, cfg, prefix="", record=None, iteration=None):
    """N blocks of [attention, hierarchical exploration] plus a tail conv."""
    x = i_hr
    for n in range(cfg.n_blocks):
        key = iteration if n == 0 else None
        if cfg.msa_enabled:
            x = msa_forward(x, store, f"{prefix}denoiser.block{n}.msa", cfg, record, key)
        x = heb_forward(x, store, f"{prefix}denoiser.block{n}.heb", cfg, record, key)
    return _conv(store, f"{prefix}denoiser.tail", x)


def upscale(i_hr, store, cfg):
    """Conv to 3*s^2 channels, then pixel shuffle to the 3-channel image."""
    if cfg.scale not in (2, 3, 4):
        raise ValueError(f"upscale: scale must be one of 2, 3, 4, got {cfg.scale}")
    return ad.pixel_shuffle(_conv(store, "upscale.conv", i_hr), cfg.scale)


def hsrnet_forward(lr_img, cfg, store, record=None):
    """Full forward pass: (b, 3, h, w) LR to (b, 3, s*h, s*w) SR.

    Inputs whose spatial size is not a multiple of 4 are reflect-padded
    before the network and the output is cropped back, so the attention
    pooling always sees valid sizes. With ``record`` given, every stage
    needed for feature dumps is retained (including the final denoiser
    pass, which does not influence the output and is skipped otherwise).
    """
    if lr_img.ndim != 4 or lr_img.shape[1] != 3:
        raise ValueError(f"hsrnet_forward: expected (b, 3, h, w) input, got {lr_img.shape}")
    _, _, h, w = lr_img.shape
    if h < 8 or w < 8:
        raise ValueError(f"hsrnet_forward: spatial dims must be >= 8, got {(h, w)}")

    pad_b, pad_r = (-h) % 4, (-w) % 4
    x_in = ad.pad_reflect(lr_img, pad_b, pad_r) if (pad_b or pad_r) else lr_img

    i_lr = feature_extract(x_in, store, cfg)
    ht_i = transposition(i_lr, store, cfg)
    if record is not None:
        record["entry"] = i_lr.data
    u = ht_i
    i_hr = None
    for k in range(cfg.iterations):
        prefix = "" if cfg.share_iter_weights else f"iter{k}."
        if record is not None:
            record[f"solver_in.{k + 1}"] = u.data
        i_hr = solver_ls(ht_i, u, store, cfg, prefix)
        if record is not None:
            record[f"denoiser_in.{k + 1}"] = i_hr.data
        if record is not None or k < cfg.iterations - 1:
            u = denoiser_forward(i_hr, store, cfg, prefix, record, iteration=k + 1)
            if record is not None:
                record[f"denoiser_out.{k + 1}"] = u.data

    sr = upscale(i_hr, store, cfg)
    if pad_b or pad_r:
        sr = ad.crop2d(sr, cfg.scale * h, cfg.scale * w)
    return sr


# ---------------------------------------------------------------------------
# feature-map dumps

FEATURE_STAGES = ("entry", "solver_in", "denoiser_in", "denoiser_out", "heb_branches", "msa_levels")

_STAGE_KEY = {
    "entry": "entry",
    "solver_in": "solver_in",
    "denoiser_in": "denoiser_in",
    "denoiser_out": "denoiser_out",
    "heb_branches": "heb_branch",
    "msa_levels": "msa_level",
}


def _normalize_map(m):
    lo = m.min()
    hi = m.max()
    if hi - lo <= 0.0:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def feature_maps(record, stage):
    """Grayscale maps for one stage of a recorded forward pass.

    Each map is the per-pixel channel maximum (channel mean for the
    entry feature) normalised to [0, 1]; a constant feature maps to
    all zeros. Returns (name, map) pairs named ``<stage>_<iter>_<index>``.
    """
    if stage not in FEATURE_STAGES:
        raise ValueError(f"unknown feature stage {stage!r}; valid stages: {', '.join(FEATURE_STAGES)}")
    key = _STAGE_KEY[stage]
    reducer = np.mean if stage == "entry" else np.max
    maps = []
    for name in sorted(record):
        parts = name.split(".")
        if parts[0] != key:
            continue
        iteration = int(parts[1]) if len(parts) > 1 else 0
        index = int(parts[2]) if len(parts) > 2 else 0
        arr = record[name][0]  # first batch item
        maps.append((f"{stage}_{iteration}_{index}", _normalize_map(reducer(arr, axis=0))))
    maps.sort(key=lambda item: item[0])
    return maps
