"""Overlapping square-patch grids, extraction and baseline reassembly.

Patches are always ordered row-major (grid row major, grid column minor);
dictionaries and patch lists keyed by position rely on this order.
"""

from dataclasses import dataclass

import numpy as np

from .imagecore import check_gray


@dataclass(frozen=True)
class GridSpec:
    patch: int
    overlap: int
    rows: int
    cols: int

    @property
    def stride(self):
        return self.patch - self.overlap

    @property
    def image_h(self):
        return (self.rows - 1) * self.stride + self.patch

    @property
    def image_w(self):
        return (self.cols - 1) * self.stride + self.patch

    @property
    def shape(self):
        return (self.image_h, self.image_w)

    def __len__(self):
        return self.rows * self.cols

    def positions(self):
        """Yield ``(grid_row, grid_col, top, left)`` in row-major order."""
        s = self.stride
        for i in range(self.rows):
            for j in range(self.cols):
                yield i, j, i * s, j * s


@dataclass
class Patch:
    grid_row: int
    grid_col: int
    top: int
    left: int
    data: np.ndarray


def make_grid(image_h, image_w, patch, overlap):
    """Tile an ``image_h x image_w`` raster with ``patch`` squares overlapping by ``overlap``."""
    if not patch > overlap > 0:
        raise ValueError(f"need patch > overlap > 0, got patch={patch}, overlap={overlap}")
    stride = patch - overlap
    if image_h < patch or image_w < patch:
        raise ValueError(f"image {image_h}x{image_w} is smaller than one {patch}x{patch} patch")
    for name, dim in (("height", image_h), ("width", image_w)):
        if (dim - patch) % stride:
            raise ValueError(
                f"image {name} {dim} does not fit a whole number of patches "
                f"((dim - {patch}) % {stride} != 0); crop_to_grid first")
    return GridSpec(patch, overlap, (image_h - patch) // stride + 1, (image_w - patch) // stride + 1)


def grid_for(img, patch, overlap):
    img = check_gray(img)
    return make_grid(img.shape[0], img.shape[1], patch, overlap)


def extract_patches(img, grid):
    img = check_gray(img)
    if img.shape != grid.shape:
        raise ValueError(f"image shape {img.shape} does not match grid {grid.shape}")
    p = grid.patch
    return [Patch(i, j, t, l, img[t:t + p, l:l + p].copy()) for i, j, t, l in grid.positions()]


def index_patches(patches, grid):
    cells = {}
    for pt in patches:
        key = (pt.grid_row, pt.grid_col)
        if not (0 <= key[0] < grid.rows and 0 <= key[1] < grid.cols):
            raise ValueError(f"patch at {key} lies outside the {grid.rows}x{grid.cols} grid")
        if key in cells:
            raise ValueError(f"duplicate patch for grid cell {key}")
        if np.shape(pt.data) != (grid.patch, grid.patch):
            raise ValueError(f"patch {key} has shape {np.shape(pt.data)}, expected {grid.patch}x{grid.patch}")
        cells[key] = pt
    missing = [(i, j) for i, j, _, _ in grid.positions() if (i, j) not in cells]
    if missing:
        raise ValueError(f"missing patches for grid cells {missing[:5]}{'...' if len(missing) > 5 else ''}")
    return cells


def coverage_count(grid):
    """Number of patches covering each pixel."""
    count = np.zeros(grid.shape, dtype=np.int64)
    p = grid.patch
    for _, _, t, l in grid.positions():
        count[t:t + p, l:l + p] += 1
    return count


def assemble_average(patches, grid):
    """Average all patch values covering each pixel."""
    cells = index_patches(patches, grid)
    acc = np.zeros(grid.shape)
    p = grid.patch
    for i, j, t, l in grid.positions():
        acc[t:t + p, l:l + p] += cells[i, j].data
    return acc / coverage_count(grid)


def min_cost_path(cost):
    """Monotone top-to-bottom path of minimum total cost.

    Each row picks one column and consecutive rows move by at most one
    column. Ties resolve to the lowest column index. Returns the column per
    row and the path cost.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    acc = cost.copy()
    for r in range(1, n):
        prev = acc[r - 1]
        best = prev.copy()
        best[1:] = np.minimum(best[1:], prev[:-1])
        best[:-1] = np.minimum(best[:-1], prev[1:])
        acc[r] += best
    path = np.empty(n, dtype=np.int64)
    path[-1] = int(np.argmin(acc[-1]))
    for r in range(n - 2, -1, -1):
        c = path[r + 1]
        lo, hi = max(c - 1, 0), min(c + 2, m)
        path[r] = lo + int(np.argmin(acc[r, lo:hi]))
    return path, float(acc[-1, path[-1]])


def assemble_mincut(patches, grid):
    """Quilt patches with minimum-error boundary cuts.

    Patches go down left-to-right, top-to-bottom. The left overlap strip
    gets a vertical seam, the top strip a horizontal one; pixels at or past
    the seam (on the incoming side) take the incoming patch. Where both
    strips meet, the vertical seam decides.
    """
    cells = index_patches(patches, grid)
    p, ov = grid.patch, grid.overlap
    out = np.zeros(grid.shape)
    written = np.zeros(grid.shape, dtype=bool)
    cols_idx = np.arange(p)
    for i, j, t, l in grid.positions():
        incoming = np.asarray(cells[i, j].data, dtype=np.float64)
        canvas = out[t:t + p, l:l + p]
        err = (incoming - canvas) ** 2
        take = np.ones((p, p), dtype=bool)
        vmask = None
        if j > 0:
            seam, _ = min_cost_path(err[:, :ov])
            vmask = cols_idx[None, :] >= seam[:, None]
            take &= vmask
        if i > 0:
            seam, _ = min_cost_path(err[:ov, :].T)
            take &= cols_idx[:, None] >= seam[None, :]
        if vmask is not None and i > 0:
            take[:ov, :ov] = vmask[:ov, :ov]
        take |= ~written[t:t + p, l:l + p]
        canvas[take] = incoming[take]
        written[t:t + p, l:l + p] = True
    return out
