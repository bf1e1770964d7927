"""Image I/O, the bicubic degradation pipeline, and color conversions.

Images are height-by-width-by-3 float64 arrays in [0, 1]. The resizer
follows the standard antialiased-imresize convention: separable Keys
cubic kernel (a = -0.5), half-pixel center mapping, edge clamping,
per-row weight normalization, and kernel support widened by the scale
ratio when downscaling with antialiasing.
"""

from __future__ import annotations

import io
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_CUBIC_SUPPORT = 4.0  # total width of the a=-0.5 cubic kernel


@dataclass
class Image:
    """A 3-channel picture with values clamped to [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"Image expects (h, w, 3) pixels, got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"Image dimensions must be >= 1, got {arr.shape[:2]}")
        self.pixels = np.clip(arr, 0.0, 1.0)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


def to_tensor_array(img):
    """(h, w, 3) image to a (1, 3, h, w) network input array."""
    return np.ascontiguousarray(img.pixels.transpose(2, 0, 1)[None])


def from_tensor_array(arr):
    """(1, 3, h, w) network output back to an Image (clamped)."""
    if arr.ndim != 4 or arr.shape[0] != 1 or arr.shape[1] != 3:
        raise ValueError(f"expected a (1, 3, h, w) array, got {arr.shape}")
    return Image(arr[0].transpose(1, 2, 0))


# ---------------------------------------------------------------------------
# file I/O


def atomic_write_bytes(path, data):
    """Write via a temp file in the same directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _quantize(pixels):
    return np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def load(path):
    """Read an 8-bit PNG (RGB/RGBA/grayscale/palette) or binary PPM (P6)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] == _PNG_SIGNATURE:
        return _load_png(data, path)
    if data[:2] == b"P6":
        return _load_ppm(data, path)
    raise ValueError(f"{path}: unsupported image format (expected 8-bit PNG or binary PPM P6)")


def _load_png(data, path):
    pil = PILImage.open(io.BytesIO(data))
    if pil.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
        raise ValueError(f"{path}: unsupported PNG bit depth (mode {pil.mode}); only 8-bit supported")
    if pil.mode not in ("L", "LA", "P", "RGB", "RGBA"):
        raise ValueError(f"{path}: unsupported PNG mode {pil.mode}")
    rgb = pil.convert("RGB")  # drops alpha, promotes grayscale/palette
    return Image(np.asarray(rgb, dtype=np.float64) / 255.0)


def _load_ppm(data, path):
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PPM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError(f"{path}: unsupported PPM maxval {maxval}; only 8-bit (255) supported")
    n = width * height * 3
    raw = data[pos : pos + n]
    if len(raw) != n:
        raise ValueError(f"{path}: truncated PPM pixel data ({len(raw)} of {n} bytes)")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
    return Image(arr.astype(np.float64) / 255.0)


def save(img, path):
    """Write 8-bit PNG or PPM P6 (chosen by extension), atomically."""
    quant = _quantize(img.pixels)
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".ppm":
        header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
        atomic_write_bytes(path, header + quant.tobytes())
        return
    buf = io.BytesIO()
    PILImage.fromarray(quant, mode="RGB").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def save_gray(map01, path):
    """Write a 2-D [0, 1] map as an 8-bit grayscale PNG, atomically."""
    quant = _quantize(np.asarray(map01, dtype=np.float64))
    buf = io.BytesIO()
    PILImage.fromarray(quant, mode="L").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


# ---------------------------------------------------------------------------
# bicubic resize


def _cubic(x):
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    near = 1.5 * ax3 - 2.5 * ax2 + 1.0
    far = -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def resize_weights(in_length, out_length, scale, antialias):
    """Per-output-row tap indices and normalized weights for one axis."""
    if scale < 1.0 and antialias:
        width = _CUBIC_SUPPORT / scale

        def kernel(x):
            return scale * _cubic(scale * x)

    else:
        width = _CUBIC_SUPPORT
        kernel = _cubic

    coords = np.arange(out_length, dtype=np.float64)
    u = (coords + 0.5) / scale - 0.5
    left = np.floor(u - width / 2.0)
    taps = int(math.ceil(width)) + 2
    indices = left[:, None] + np.arange(taps)[None, :]
    weights = kernel(u[:, None] - indices)
    weights /= weights.sum(axis=1, keepdims=True)
    if not np.allclose(weights.sum(axis=1), 1.0, rtol=0.0, atol=1e-12):
        raise AssertionError("resize weights do not sum to 1")
    indices = np.clip(indices, 0, in_length - 1).astype(np.intp)
    return indices, weights


def resize_array(arr, scale, antialias=True):
    """Separable cubic resize of an (h, w) or (h, w, c) array, unclipped."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    arr = np.asarray(arr, dtype=np.float64)
    out_h = max(1, int(math.ceil(arr.shape[0] * scale)))
    out_w = max(1, int(math.ceil(arr.shape[1] * scale)))

    idx_r, w_r = resize_weights(arr.shape[0], out_h, scale, antialias)
    idx_c, w_c = resize_weights(arr.shape[1], out_w, scale, antialias)

    rows = np.einsum("ot,ot...->o...", w_r, arr[idx_r])
    pass_cols = rows.transpose(1, 0, *range(2, rows.ndim))
    cols = np.einsum("ot,ot...->o...", w_c, pass_cols[idx_c])
    return cols.transpose(1, 0, *range(2, cols.ndim))


def bicubic_resize(img, scale, antialias=True):
    """Resize an Image by a scale factor; output clamped to [0, 1]."""
    out = resize_array(img.pixels, scale, antialias)
    if out.shape[0] < 1 or out.shape[1] < 1:
        raise ValueError(f"bicubic_resize: empty output for scale {scale}")
    return Image(out)


def center_crop_to_multiple(img, s):
    """Largest centered crop whose dimensions are divisible by s."""
    h = (img.height // s) * s
    w = (img.width // s) * s
    if h < s or w < s:
        raise ValueError(f"image {img.pixels.shape[:2]} too small to crop to a multiple of {s}")
    top = (img.height - h) // 2
    left = (img.width - w) // 2
    return Image(img.pixels[top : top + h, left : left + w])


# ---------------------------------------------------------------------------
# color conversions

_Y_COEF = np.array([65.481, 128.553, 24.966])

_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])


def rgb_to_y(img):
    """Studio-swing luma: 16/255 + (65.481 R + 128.553 G + 24.966 B)/255."""
    return 16.0 / 255.0 + img.pixels @ (_Y_COEF / 255.0)


def rgb_to_lab(img):
    """sRGB to CIELAB (D65 white); L in [0, 100]."""
    srgb = img.pixels
    linear = np.where(srgb <= 0.04045, srgb / 12.92, ((srgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_TO_XYZ.T
    ratio = xyz / _D65_WHITE
    delta = 6.0 / 29.0
    f = np.where(ratio > delta**3, np.cbrt(ratio), ratio / (3.0 * delta**2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab
