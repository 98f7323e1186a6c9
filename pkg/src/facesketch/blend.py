"""Stage 3: full-coverage placement of retrained patches.

With overlap equal to the stride, the patches split by grid parity into
three passes:

1. (even, even) patches, which tile the canvas without overlapping and are
   simply written;
2. (even, odd) and (odd, even) patches, each spline-blended into the canvas
   across the pass-1 seams;
3. (odd, odd) patches, which repair the seam crossings pass 2 leaves.

Each later patch is the "A" image of :func:`spline_blend`; its mask keeps
the patch in the middle and the canvas within ``overlap // 2`` pixels of
any patch edge that is not also a canvas edge.
"""

from dataclasses import dataclass

import numpy as np

from .imagecore import check_gray
from .patching import index_patches, assemble_average, assemble_mincut
from .pyramid import DEFAULT_A, levels_for_patch, spline_blend

STRATEGIES = ("average", "mincut", "spline")


@dataclass(frozen=True)
class BlendPlan:
    pass1: tuple
    pass2: tuple
    pass3: tuple

    def __iter__(self):
        return iter((self.pass1, self.pass2, self.pass3))


def check_full_coverage(grid):
    if grid.patch != 2 * grid.stride:
        raise ValueError(f"full-coverage blending needs patch == 2 * stride "
                         f"(patch={grid.patch}, overlap={grid.overlap})")
    if grid.rows % 2 == 0 or grid.cols % 2 == 0:
        raise ValueError(f"full-coverage blending needs odd grid dimensions, got {grid.rows}x{grid.cols}")


def plan_passes(grid):
    check_full_coverage(grid)
    cells = [(i, j) for i in range(grid.rows) for j in range(grid.cols)]
    return BlendPlan(
        tuple(c for c in cells if c[0] % 2 == 0 and c[1] % 2 == 0),
        tuple(c for c in cells if (c[0] + c[1]) % 2 == 1),
        tuple(c for c in cells if c[0] % 2 == 1 and c[1] % 2 == 1),
    )


def make_patch_mask(patch, overlap, top=False, bottom=False, left=False, right=False):
    """Binary keep-the-patch mask.

    The 1-region is the interior at pixel-centre distance >= overlap / 2 from
    every patch edge, extended to the edge on sides flagged as lying on the
    canvas border.
    """
    if not 0 <= overlap < patch:
        raise ValueError(f"need 0 <= overlap < patch, got overlap={overlap}, patch={patch}")
    h = overlap // 2
    mask = np.zeros((patch, patch))
    r0, r1 = (0 if top else h), (patch if bottom else patch - h)
    c0, c1 = (0 if left else h), (patch if right else patch - h)
    mask[r0:r1, c0:c1] = 1.0
    return mask


def blend_full_coverage(patches, grid, levels=None, kernel_a=DEFAULT_A, snapshots=None):
    """Three-pass spline blending of one patch per grid cell.

    If ``snapshots`` is a list, a copy of the canvas after each pass is
    appended to it.
    """
    plan = plan_passes(grid)
    cells = index_patches(patches, grid)
    if levels is None:
        levels = levels_for_patch(grid.patch)
    p, s = grid.patch, grid.stride
    H, W = grid.shape
    canvas = np.zeros(grid.shape)
    writes = np.zeros(grid.shape, dtype=np.int64)
    for i, j in plan.pass1:
        canvas[i * s:i * s + p, j * s:j * s + p] = cells[i, j].data
        writes[i * s:i * s + p, j * s:j * s + p] += 1
    if not np.all(writes == 1):
        raise AssertionError("pass 1 did not cover the canvas exactly once")
    if snapshots is not None:
        snapshots.append(canvas.copy())
    for stage in (plan.pass2, plan.pass3):
        for i, j in stage:
            t, l = i * s, j * s
            mask = make_patch_mask(p, grid.overlap, top=t == 0, bottom=t + p == H,
                                   left=l == 0, right=l + p == W)
            sub = canvas[t:t + p, l:l + p]
            canvas[t:t + p, l:l + p] = spline_blend(check_gray(cells[i, j].data), sub, mask, levels, kernel_a)
        if snapshots is not None:
            snapshots.append(canvas.copy())
    return canvas


def blend_with_strategy(patches, grid, strategy="spline", levels=None, kernel_a=DEFAULT_A):
    if strategy == "average":
        return assemble_average(patches, grid)
    if strategy == "mincut":
        return assemble_mincut(patches, grid)
    if strategy == "spline":
        return blend_full_coverage(patches, grid, levels, kernel_a)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def grid_boundaries(grid):
    """Pixel positions ``k`` (per axis) where a patch edge falls between ``k - 1`` and ``k``."""
    s, p = grid.stride, grid.patch

    def axis(n, length):
        edges = {i * s for i in range(n)} | {i * s + p for i in range(n)}
        return sorted(e for e in edges if 0 < e < length)

    return axis(grid.rows, grid.image_h), axis(grid.cols, grid.image_w)


def pass1_boundaries(grid):
    """Seam positions of the pass-1 tiling (multiples of the patch size)."""
    return (list(range(grid.patch, grid.image_h, grid.patch)),
            list(range(grid.patch, grid.image_w, grid.patch)))


def seam_energy(img, grid, boundaries=None):
    """Mean squared intensity jump over all pixel pairs straddling a patch boundary.

    ``boundaries`` is ``(row_positions, col_positions)``; defaults to every
    patch edge of ``grid``.
    """
    img = check_gray(img)
    if img.shape != grid.shape:
        raise ValueError(f"image shape {img.shape} does not match grid {grid.shape}")
    rows, cols = grid_boundaries(grid) if boundaries is None else boundaries
    diffs = [img[r] - img[r - 1] for r in rows] + [img[:, c] - img[:, c - 1] for c in cols]
    if not diffs:
        return 0.0
    d = np.concatenate(diffs)
    return float(np.mean(d ** 2))
