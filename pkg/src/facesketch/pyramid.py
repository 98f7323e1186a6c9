"""Gaussian/Laplacian pyramids and the masked multiresolution spline.

All filtering uses the separable 5-tap generating kernel

    w = [1/4 - a/2, 1/4, a, 1/4, 1/4 - a/2]

with reflect-101 borders (scipy's ``mirror`` mode), which keeps constant
images exactly constant at every level. Sizes halve with ceiling, so odd
dimensions are fine.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .imagecore import check_gray

DEFAULT_A = 0.4


def generating_kernel(a=DEFAULT_A):
    return np.array([0.25 - a / 2, 0.25, a, 0.25, 0.25 - a / 2])


def _smooth(img, kernel):
    out = correlate1d(img, kernel, axis=0, mode="mirror")
    return correlate1d(out, kernel, axis=1, mode="mirror")


def reduce(img, kernel_a=DEFAULT_A):
    """Blur then keep even rows/columns; output is ``ceil(dim / 2)`` per axis."""
    img = check_gray(img)
    if min(img.shape) < 2:
        raise ValueError(f"image {img.shape} too small to reduce")
    return _smooth(img, generating_kernel(kernel_a))[::2, ::2]


def expand(img, target_h, target_w, kernel_a=DEFAULT_A):
    """Zero-interleave to ``(target_h, target_w)`` and filter with the doubled kernel."""
    img = check_gray(img)
    h, w = img.shape
    if (target_h + 1) // 2 != h or (target_w + 1) // 2 != w:
        raise ValueError(f"cannot expand {img.shape} to ({target_h}, {target_w})")
    if min(target_h, target_w) < 2:
        raise ValueError("target too small for reflect-101 filtering")
    up = np.zeros((target_h, target_w))
    up[::2, ::2] = img
    return _smooth(up, 2.0 * generating_kernel(kernel_a))


def max_levels(shape):
    """Largest band count for which every reduced level keeps both sides >= 2."""
    h, w = shape
    n = 0
    while min(h, w) >= 2:
        n += 1
        h, w = (h + 1) // 2, (w + 1) // 2
    return n


def levels_for_patch(patch):
    """Band count used when blending ``patch``-sized squares."""
    return max(int(math.floor(math.log2(patch))) - 2, 2)


def gaussian_pyramid(img, levels, kernel_a=DEFAULT_A):
    """``[G_0, ..., G_levels]``."""
    img = check_gray(img)
    if levels < 0 or levels > max_levels(img.shape):
        raise ValueError(f"{levels} levels invalid for image {img.shape} (max {max_levels(img.shape)})")
    out = [img]
    for _ in range(levels):
        out.append(reduce(out[-1], kernel_a))
    return out


@dataclass
class LaplacianPyramid:
    levels: list
    top: np.ndarray
    kernel_a: float = DEFAULT_A

    @property
    def shapes(self):
        return [b.shape for b in self.levels] + [self.top.shape]


def build_laplacian(img, levels, kernel_a=DEFAULT_A):
    if levels < 1:
        raise ValueError("levels must be >= 1")
    g = gaussian_pyramid(img, levels, kernel_a)
    bands = [g[k] - expand(g[k + 1], *g[k].shape, kernel_a) for k in range(levels)]
    return LaplacianPyramid(bands, g[-1], kernel_a)


def reconstruct(pyr):
    cur = pyr.top
    for band in reversed(pyr.levels):
        if (band.shape[0] + 1) // 2 != cur.shape[0] or (band.shape[1] + 1) // 2 != cur.shape[1]:
            raise ValueError(f"band {band.shape} inconsistent with coarser level {cur.shape}")
        cur = band + expand(cur, *band.shape, pyr.kernel_a)
    return cur


def spline_blend(A, B, mask, levels, kernel_a=DEFAULT_A):
    """Blend two images band by band, weighting each band by the mask's Gaussian level.

    ``mask == 1`` selects ``A``.
    """
    A = check_gray(A, "A")
    B = check_gray(B, "B")
    mask = check_gray(mask, "mask")
    if not A.shape == B.shape == mask.shape:
        raise ValueError(f"shape mismatch: A {A.shape}, B {B.shape}, mask {mask.shape}")
    if mask.min() < 0.0 or mask.max() > 1.0:
        raise ValueError("mask values must lie in [0, 1]")
    la = build_laplacian(A, levels, kernel_a)
    lb = build_laplacian(B, levels, kernel_a)
    gm = gaussian_pyramid(mask, levels, kernel_a)
    bands = [g * a + (1.0 - g) * b for g, a, b in zip(gm, la.levels, lb.levels)]
    top = gm[-1] * la.top + (1.0 - gm[-1]) * lb.top
    return reconstruct(LaplacianPyramid(bands, top, kernel_a))
