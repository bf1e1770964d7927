"""Patch-sampling trainer (L1 loss, Adam) and checkpoint persistence.

LR inputs are derived on the fly from HR images via antialiased bicubic
downscaling. Sampling is deterministic: the batch for global step t is
drawn from a generator seeded with (seed, 1, t), so a resumed run
replays the exact trajectory of an uninterrupted one.

Checkpoint layout (little-endian), sections are skipped when unknown so
files remain forward compatible:

    magic  b"HSRW"
    u32    format version (1)
    u32    config JSON length, followed by the JSON bytes
    then sections: 4-byte tag, u64 payload length, payload
      b"PARA"  u32 count; per parameter: u16 name length, name,
               u8 ndim, ndim*u32 dims, float32 data
      b"TRNS"  u64 global step; f64 lr, beta1, beta2, eps; u32 count;
               per parameter: u16 name length, name, then float64
               value/m/v arrays (shape from the PARA table)
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, TrainingDiverged
from .imaging import atomic_write_bytes, bicubic_resize, center_crop_to_multiple, load, to_tensor_array
from .network import HsrConfig, build_weights, hsrnet_forward, parameter_shapes

MAGIC = b"HSRW"
FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    data_dir: str = ""
    checkpoint_path: str = "weights.hsrw"
    loss_csv_path: str = ""
    lr: float = 1e-4
    epochs: int = 10
    steps_per_epoch: int = 50
    batch_size: int = 4
    patch_size: int = 48
    seed: int = 0
    checkpoint_interval: int = 0  # extra checkpoints every N steps; 0 = end only
    resume_from: str = ""
    network: HsrConfig = field(default_factory=HsrConfig)

    def __post_init__(self):
        if isinstance(self.network, dict):
            self.network = HsrConfig.from_dict(self.network)
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ValueError("epochs and steps_per_epoch must be >= 1")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patch_size < 8 or self.patch_size % 4:
            raise ValueError(f"patch_size must be >= 8 and a multiple of 4, got {self.patch_size}")

    @property
    def total_steps(self):
        return self.epochs * self.steps_per_epoch

    def to_dict(self):
        d = asdict(self)
        d["network"] = self.network.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        fields_ = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - fields_
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# dataset


@dataclass
class Pair:
    name: str
    hr: np.ndarray  # (h, w, 3)
    lr: np.ndarray


def build_pairs(hr_dir, scale):
    """Derive (HR, LR) pairs for every image in a directory, sorted by
    name; HR images are center-cropped to dimensions divisible by the
    scale before downscaling."""
    paths = sorted(
        p for p in Path(hr_dir).iterdir() if p.suffix.lower() in (".png", ".ppm")
    )
    if not paths:
        raise ValueError(f"no .png/.ppm images found in {hr_dir}")
    pairs = []
    for p in paths:
        hr = center_crop_to_multiple(load(p), scale)
        lr = bicubic_resize(hr, 1.0 / scale, antialias=True)
        pairs.append(Pair(p.name, hr.pixels, lr.pixels))
    return pairs


def sample_batch(pairs, patch, scale, batch_size, rng):
    """Aligned random LR/HR patch pairs as (b, 3, p, p) and (b, 3, sp, sp)."""
    lr_patches = []
    hr_patches = []
    for _ in range(batch_size):
        pair = pairs[int(rng.integers(len(pairs)))]
        lr_h, lr_w = pair.lr.shape[:2]
        if patch > lr_h or patch > lr_w:
            raise ValueError(f"patch size {patch} exceeds LR image {pair.lr.shape[:2]} ({pair.name})")
        y = int(rng.integers(lr_h - patch + 1))
        x = int(rng.integers(lr_w - patch + 1))
        lr_patches.append(pair.lr[y : y + patch, x : x + patch].transpose(2, 0, 1))
        hr_patches.append(
            pair.hr[scale * y : scale * (y + patch), scale * x : scale * (x + patch)].transpose(2, 0, 1)
        )
    return np.ascontiguousarray(np.stack(lr_patches)), np.ascontiguousarray(np.stack(hr_patches))


def _step_rng(seed, step):
    return np.random.default_rng([seed, 1, step])


# ---------------------------------------------------------------------------
# checkpoints


def _pack_params(store):
    out = io.BytesIO()
    params = store.parameters()
    out.write(struct.pack("<I", len(params)))
    for p in params:
        name = p.name.encode("utf-8")
        out.write(struct.pack("<H", len(name)))
        out.write(name)
        shape = p.value.data.shape
        out.write(struct.pack("<B", len(shape)))
        out.write(struct.pack(f"<{len(shape)}I", *shape))
        out.write(p.value.data.astype("<f4").tobytes())
    return out.getvalue()


def _pack_train_state(store, adam, step):
    out = io.BytesIO()
    out.write(struct.pack("<Q", step))
    out.write(struct.pack("<4d", adam.lr, adam.beta1, adam.beta2, adam.eps))
    params = store.parameters()
    out.write(struct.pack("<I", len(params)))
    for p in params:
        name = p.name.encode("utf-8")
        out.write(struct.pack("<H", len(name)))
        out.write(name)
        out.write(p.value.data.astype("<f8").tobytes())
        m = adam.m.get(p.name)
        v = adam.v.get(p.name)
        zeros = np.zeros_like(p.value.data)
        out.write((m if m is not None else zeros).astype("<f8").tobytes())
        out.write((v if v is not None else zeros).astype("<f8").tobytes())
    return out.getvalue()


def save_checkpoint(path, cfg, store, adam=None, step=0):
    """Serialize config and parameters (f32); with `adam` given, an
    exact-resume section (f64 values and moments) is appended."""
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", FORMAT_VERSION))
    cfg_json = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    out.write(struct.pack("<I", len(cfg_json)))
    out.write(cfg_json)
    para = _pack_params(store)
    out.write(b"PARA" + struct.pack("<Q", len(para)) + para)
    if adam is not None:
        trns = _pack_train_state(store, adam, step)
        out.write(b"TRNS" + struct.pack("<Q", len(trns)) + trns)
    atomic_write_bytes(path, out.getvalue())


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def read(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))

    @property
    def remaining(self):
        return len(self.data) - self.pos


@dataclass
class LoadedCheckpoint:
    config: HsrConfig
    store: ad.ParameterStore
    step: int = 0
    adam: ad.AdamState | None = None


def load_checkpoint(path, with_train_state=False):
    """Read a checkpoint; parameter names and shapes must agree with the
    stored configuration. Unknown sections are ignored."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, path)
    if r.read(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic (not a checkpoint file)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")
    (cfg_len,) = r.unpack("<I")
    try:
        cfg = HsrConfig.from_dict(json.loads(r.read(cfg_len).decode("utf-8")))
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: invalid config section: {exc}") from exc

    tables = {}
    while r.remaining:
        tag = r.read(4)
        (length,) = r.unpack("<Q")
        tables[tag] = r.read(length)
    if b"PARA" not in tables:
        raise CheckpointError(f"{path}: missing parameter table")

    expected = dict(parameter_shapes(cfg))
    pr = _Reader(tables[b"PARA"], path)
    (count,) = pr.unpack("<I")
    store = ad.ParameterStore()
    shapes = {}
    for _ in range(count):
        (name_len,) = pr.unpack("<H")
        name = pr.read(name_len).decode("utf-8")
        (ndim,) = pr.unpack("<B")
        shape = pr.unpack(f"<{ndim}I")
        if name not in expected or expected[name] != shape:
            raise CheckpointError(
                f"{path}: parameter table disagrees with config: {name} has shape {shape}, "
                f"expected {expected.get(name)}"
            )
        n = math.prod(shape)
        arr = np.frombuffer(pr.read(4 * n), dtype="<f4").astype(np.float64).reshape(shape)
        store.register(name, arr)
        shapes[name] = shape
    if set(shapes) != set(expected):
        missing = sorted(set(expected) - set(shapes))
        raise CheckpointError(f"{path}: parameter table disagrees with config: missing {missing[:3]}")

    result = LoadedCheckpoint(cfg, store)
    if with_train_state:
        if b"TRNS" not in tables:
            raise CheckpointError(f"{path}: checkpoint has no training state to resume from")
        tr = _Reader(tables[b"TRNS"], path)
        (step,) = tr.unpack("<Q")
        lr, beta1, beta2, eps = tr.unpack("<4d")
        adam = ad.AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, t=step)
        (count,) = tr.unpack("<I")
        for _ in range(count):
            (name_len,) = tr.unpack("<H")
            name = tr.read(name_len).decode("utf-8")
            if name not in shapes:
                raise CheckpointError(f"{path}: training state names unknown parameter {name!r}")
            n = math.prod(shapes[name])
            value = np.frombuffer(tr.read(8 * n), dtype="<f8").reshape(shapes[name])
            store[name].value.data = value.copy()
            adam.m[name] = np.frombuffer(tr.read(8 * n), dtype="<f8").reshape(shapes[name]).copy()
            adam.v[name] = np.frombuffer(tr.read(8 * n), dtype="<f8").reshape(shapes[name]).copy()
        result.step = step
        result.adam = adam
    return result


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    losses: list
    checkpoint_path: str
    store: ad.ParameterStore
    start_step: int = 0


def loss_csv_text(losses, start_step=0):
    lines = ["step,loss"]
    for i, value in enumerate(losses, start=start_step + 1):
        lines.append(f"{i},{value!r}")
    return "\n".join(lines) + "\n"


def train(cfg, pairs=None, log=None):
    """Run the training loop; returns losses and the final parameters.

    Deterministic per (seed, config, data). On a non-finite loss the
    parameters that produced the last finite loss are saved next to the
    checkpoint path and TrainingDiverged is raised.
    """
    net_cfg = cfg.network
    if pairs is None:
        pairs = build_pairs(cfg.data_dir, net_cfg.scale)

    if cfg.resume_from:
        loaded = load_checkpoint(cfg.resume_from, with_train_state=True)
        if loaded.config != net_cfg:
            raise CheckpointError(
                f"{cfg.resume_from}: checkpoint config {loaded.config} does not match training config"
            )
        store, adam, start_step = loaded.store, loaded.adam, loaded.step
        adam.lr = cfg.lr
    else:
        store = build_weights(net_cfg, seed=[cfg.seed, 0])
        adam = ad.AdamState(lr=cfg.lr)
        start_step = 0

    losses = []
    last_good = {name: p.value.data.copy() for name, p in store.items()}
    for step in range(start_step + 1, cfg.total_steps + 1):
        rng = _step_rng(cfg.seed, step)
        lr_np, hr_np = sample_batch(pairs, cfg.patch_size, net_cfg.scale, cfg.batch_size, rng)
        pred = hsrnet_forward(ad.Tensor(lr_np), net_cfg, store)
        loss = ad.l1_loss(pred, ad.Tensor(hr_np))
        value = float(loss.data)
        if not math.isfinite(value):
            rescue = str(cfg.checkpoint_path) + ".last-good"
            rescue_store = ad.ParameterStore()
            for name, arr in last_good.items():
                rescue_store.register(name, arr)
            save_checkpoint(rescue, net_cfg, rescue_store)
            raise TrainingDiverged(step, rescue)
        losses.append(value)
        for name, p in store.items():
            last_good[name] = p.value.data.copy()
        ad.backward(loss)
        ad.adam_step(store, adam)
        store.zero_grad()
        if log is not None:
            log(step, value)
        if cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            save_checkpoint(cfg.checkpoint_path, net_cfg, store, adam, step)

    save_checkpoint(cfg.checkpoint_path, net_cfg, store, adam, cfg.total_steps)
    if cfg.loss_csv_path:
        atomic_write_bytes(cfg.loss_csv_path, loss_csv_text(losses, start_step).encode("ascii"))
    return TrainResult(losses, str(cfg.checkpoint_path), store, start_step)
