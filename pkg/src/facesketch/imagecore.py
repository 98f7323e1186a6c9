"""Grayscale raster helpers shared by every stage of the pipeline.

Images are plain 2-D ``float64`` numpy arrays with intensities in [0, 1]
after loading. Intermediate results may leave that range; only
:func:`save_image` clamps.
"""

import os
import re

import numpy as np
from PIL import Image

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_PNM_HEADER = re.compile(rb"\s*(P[25])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)"
                         rb"\s+(?:#[^\n]*\n\s*)*(\d+)\s")


class ImageFormatError(ValueError):
    """Raised when a file cannot be decoded as a supported grayscale image."""


def check_gray(img, name="image"):
    """Validate and convert ``img`` to a 2-D float64 array.

    Accepts anything ``np.asarray`` understands. Raises ``ValueError`` for
    wrong dimensionality, empty images or non-finite values.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} has a zero dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _read_pgm(data):
    m = _PNM_HEADER.match(data)
    if m is None:
        raise ImageFormatError("malformed PGM header")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if w < 1 or h < 1:
        raise ImageFormatError(f"zero-dimension image ({h}x{w})")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"invalid maxval {maxval}")
    body = data[m.end():]
    if magic == b"P2":
        values = np.array(body.split(), dtype=np.int64)
        if values.size < w * h:
            raise ImageFormatError("truncated PGM raster")
        values = values[: w * h]
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = w * h * dtype.itemsize
        if len(body) < need:
            raise ImageFormatError("truncated PGM raster")
        values = np.frombuffer(body[:need], dtype=dtype)
    return values.reshape(h, w).astype(np.float64) / maxval


def load_image(path):
    """Load a grayscale image as float64 in [0, 1].

    PGM (P5 and P2) is decoded directly so that intensities are exactly
    ``value / maxval``. Other formats go through Pillow; colour inputs are
    converted to luminance with the 0.299/0.587/0.114 weights.
    """
    path = os.fspath(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] in (b"P5", b"P2"):
        return _read_pgm(data)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except Exception as exc:  # Pillow raises a zoo of types
        raise ImageFormatError(f"unsupported or unreadable image {path!r}: {exc}") from exc
    if arr.size == 0:
        raise ImageFormatError(f"zero-dimension image {path!r}")
    if mode in ("I;16", "I;16B", "I;16L"):
        return arr.astype(np.float64) / 65535.0
    if mode == "I":
        return arr.astype(np.float64) / 65535.0
    if mode == "F":
        return arr.astype(np.float64)
    if mode == "1":
        return arr.astype(np.float64)
    if arr.ndim == 3:
        if mode in ("LA", "PA"):
            arr = arr[..., 0]
        else:
            rgb = arr[..., :3].astype(np.float64)
            return rgb @ np.array(LUMA_WEIGHTS) / 255.0
    if mode == "P":
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB")).astype(np.float64)
        return rgb @ np.array(LUMA_WEIGHTS) / 255.0
    return arr.astype(np.float64) / 255.0


def to_uint8(img):
    """Quantize to 8 bits: ``floor(clamp(v, 0, 1) * 255 + 0.5)``."""
    img = check_gray(img)
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(img, path):
    """Write an 8-bit grayscale file. ``.png`` goes through Pillow, anything else is P5 PGM."""
    path = os.fspath(path)
    q = to_uint8(img)
    if path.lower().endswith(".png"):
        Image.fromarray(q, mode="L").save(path)
        return
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(q.tobytes())


def rmse(a, b):
    a = check_gray(a, "a")
    b = check_gray(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def grid_valid_length(dim, patch, overlap):
    """Largest length <= ``dim`` with ``(length - patch) % (2 * stride) == 0``, or None."""
    if not patch > overlap > 0:
        raise ValueError(f"need patch > overlap > 0, got patch={patch}, overlap={overlap}")
    if dim < patch:
        return None
    period = 2 * (patch - overlap)
    return patch + ((dim - patch) // period) * period


def crop_to_grid(img, patch, overlap):
    """Center-crop so both axes satisfy the full-coverage divisibility rule.

    An odd crop amount removes the extra row/column from the bottom/right.
    """
    img = check_gray(img)
    h, w = img.shape
    new_h = grid_valid_length(h, patch, overlap)
    new_w = grid_valid_length(w, patch, overlap)
    if new_h is None or new_w is None:
        raise ValueError(f"image {h}x{w} is smaller than one {patch}x{patch} patch")
    top = (h - new_h) // 2
    left = (w - new_w) // 2
    return img[top:top + new_h, left:left + new_w].copy()
