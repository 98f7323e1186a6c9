"""Training-set ingestion and a seeded synthetic photo/sketch generator.

The synthetic "artist" is a fixed tone curve plus unsharp masking, applied
identically to every photo, so the photo-to-sketch map is learnable.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .imagecore import grid_valid_length, load_image, save_image
from .mrf import TrainingPair

# (patch, overlap) of the two pipeline grids
MRF_GRID = (10, 5)
NMF_GRID = (20, 10)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticStyle:
    seed: int = 0
    gamma: float = 1.6
    edge_gain: float = 1.5
    blur_radius: int = 2

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError("gamma must be finite and > 0")
        if not (np.isfinite(self.edge_gain) and self.edge_gain >= 0):
            raise ValueError("edge_gain must be finite and >= 0")
        if self.blur_radius < 0:
            raise ValueError("blur_radius must be >= 0")

    def apply(self, photo):
        """Map a photo to its sketch under this style."""
        photo = np.asarray(photo, dtype=np.float64)
        blurred = uniform_filter(photo, size=2 * self.blur_radius + 1, mode="reflect")
        return np.clip(photo ** self.gamma + self.edge_gain * (photo - blurred), 0.0, 1.0)


def common_grid_shape(shapes, grids=(NMF_GRID, MRF_GRID)):
    """Largest shape fitting inside every ``shapes`` entry and valid for all ``grids``."""
    h = min(s[0] for s in shapes)
    w = min(s[1] for s in shapes)

    def fit(n):
        while n > 0:
            if all(grid_valid_length(n, p, o) == n for p, o in grids):
                return n
            n -= 1
        return None

    fh, fw = fit(h), fit(w)
    if fh is None or fw is None:
        raise ValueError(f"no grid-valid size fits inside {h}x{w}")
    return fh, fw


def center_crop(img, shape):
    h, w = img.shape
    top, left = (h - shape[0]) // 2, (w - shape[1]) // 2
    return img[top:top + shape[0], left:left + shape[1]].copy()


def check_grid_valid(h, w, grids=(NMF_GRID, MRF_GRID)):
    for p, o in grids:
        for name, n in (("height", h), ("width", w)):
            if grid_valid_length(n, p, o) != n:
                raise ValueError(
                    f"{name} {n} is not grid-valid for patch {p}/overlap {o}: "
                    f"need (dim - {p}) % {2 * (p - o)} == 0 and dim >= {p}")


def load_manifest(path, grids=(NMF_GRID, MRF_GRID)):
    """Read ``photo<TAB>sketch`` lines; paths are relative to the manifest.

    Blank lines and ``#`` comments are skipped. All pairs are center-cropped
    to the largest common size valid for every grid in ``grids``.
    """
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = [f for f in line.split("\t") if f.strip()]
            if len(fields) != 2:
                raise ManifestError(f"{path}:{lineno}: expected 'photo<TAB>sketch', got {line!r}")
            photo_path, sketch_path = (os.path.join(base, f.strip()) for f in fields)
            for p in (photo_path, sketch_path):
                if not os.path.exists(p):
                    raise ManifestError(f"{path}:{lineno}: missing file {p}")
            photo, sketch = load_image(photo_path), load_image(sketch_path)
            if photo.shape != sketch.shape:
                raise ManifestError(f"{path}:{lineno}: photo {photo.shape} and sketch {sketch.shape} differ in size")
            pairs.append((photo, sketch))
    if not pairs:
        raise ManifestError(f"{path}: no training pairs")
    shape = common_grid_shape([p.shape for p, _ in pairs], grids)
    return [TrainingPair(center_crop(p, shape), center_crop(s, shape)) for p, s in pairs]


def smooth_field(rng, h, w, terms=6):
    """Sum of random products of sinusoids, rescaled to [0, 1]."""
    y = np.arange(h)[:, None] / h
    x = np.arange(w)[None, :] / w
    field = np.zeros((h, w))
    for _ in range(terms):
        fy, fx = rng.uniform(0.5, 4.0, size=2)
        py, px = rng.uniform(0.0, 2 * np.pi, size=2)
        amp = rng.uniform(0.5, 1.0)
        field += amp * np.sin(2 * np.pi * fy * y + py) * np.sin(2 * np.pi * fx * x + px)
    lo, hi = field.min(), field.max()
    if hi - lo < 1e-12:
        return np.full((h, w), 0.5)
    return (field - lo) / (hi - lo)


def gen_synthetic_pairs(n, h=60, w=60, style=None):
    """``n`` seeded photo/sketch pairs; pair ``j`` depends only on ``(style.seed, j)``."""
    style = style or SyntheticStyle()
    check_grid_valid(h, w)
    pairs = []
    for j in range(n):
        rng = np.random.default_rng([style.seed, j])
        photo = smooth_field(rng, h, w)
        pairs.append(TrainingPair(photo, style.apply(photo)))
    return pairs


def write_corpus(pairs, out_dir):
    """Save pairs as ``photo_###.pgm`` / ``sketch_###.pgm`` plus ``manifest.txt``."""
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for j, pair in enumerate(pairs):
        photo_name, sketch_name = f"photo_{j:03d}.pgm", f"sketch_{j:03d}.pgm"
        save_image(pair.photo, os.path.join(out_dir, photo_name))
        save_image(pair.sketch, os.path.join(out_dir, sketch_name))
        lines.append(f"{photo_name}\t{sketch_name}\n")
    manifest = os.path.join(out_dir, "manifest.txt")
    with open(manifest, "w") as fh:
        fh.writelines(lines)
    return manifest

