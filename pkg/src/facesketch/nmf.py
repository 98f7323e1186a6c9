"""Stage 2: per-location nonnegative dictionaries and patch retraining.

Each grid location gets its own basis ``W`` (d x r) learned from the
co-located patches of the artist sketches with multiplicative
updates on the Frobenius objective. A crude patch ``y`` is retrained as
``W @ alpha`` with ``alpha >= 0`` fitted by the same H-update, ``W`` fixed.
"""

import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .imagecore import check_gray
from .patching import GridSpec, Patch, extract_patches

logger = logging.getLogger(__name__)

EPS = 1e-12
MAGIC = b"NMFD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4s7I")


def _check_data(V):
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise ValueError(f"data matrix must be 2-D, got shape {V.shape}")
    if np.any(V < 0):
        raise ValueError("data matrix has negative entries")
    return V


def nmf_factorize(V, r, max_iters=500, rel_tol=1e-5, seed=0, callback=None):
    """Factorize ``V ~= W @ H`` with W, H >= 0.

    Parameters
    ----------
    V : (d, M) array, nonnegative
    r : int
        Number of atoms, ``1 <= r <= min(d, M)``.
    max_iters : int
    rel_tol : float
        Stop once the relative decrease of ``||V - WH||_F`` between two
        iterations falls below this.
    seed : int
        Seeds the uniform (0.1, 1.0) initialization.
    callback : callable, optional
        Called as ``callback(W, H)`` after every iteration.

    Returns
    -------
    W : (d, r) array with unit-norm columns
    H : (r, M) array
    trace : list of float
        ``||V - WH||_F`` after each full iteration (H update, then W update).
    """
    V = _check_data(V)
    d, M = V.shape
    if not 1 <= r <= min(d, M):
        raise ValueError(f"rank {r} out of range [1, {min(d, M)}]")
    rng = np.random.default_rng(seed)
    W = rng.uniform(0.1, 1.0, size=(d, r))
    H = rng.uniform(0.1, 1.0, size=(r, M))

    if not np.any(V):
        # The updates would collapse W to zero; keep the initial atoms.
        return W / np.linalg.norm(W, axis=0), np.zeros((r, M)), [0.0]

    trace = []
    prev = None
    for _ in range(max_iters):
        H *= (W.T @ V) / (W.T @ W @ H + EPS)
        W *= (V @ H.T) / (W @ (H @ H.T) + EPS)
        obj = float(np.linalg.norm(V - W @ H))
        trace.append(obj)
        if callback is not None:
            callback(W, H)
        if prev is not None and (prev == 0.0 or (prev - obj) / prev < rel_tol):
            break
        prev = obj

    scale = np.linalg.norm(W, axis=0)
    scale[scale == 0] = 1.0
    return W / scale, H * scale[:, None], trace


def project_coefficients(y, W, max_iters=200, rel_tol=1e-5, return_trace=False):
    """Nonnegative coefficients ``alpha`` minimizing ``||y - W alpha||``.

    Uses the multiplicative H-update with ``W`` fixed. Atom ``k`` starts
    at ``mean(y) / sum(W[:, k])``, so rescaling an atom rescales its
    coefficient inversely and leaves ``W @ alpha`` unchanged.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != y.size:
        raise ValueError(f"dictionary shape {W.shape} incompatible with patch length {y.size}")
    if np.any(y < 0):
        raise ValueError("target patch has negative entries")
    colsum = W.sum(axis=0)
    if np.any(colsum <= 0):
        raise ValueError("dictionary has an all-zero atom")
    alpha = y.mean() / colsum
    Wty = W.T @ y
    WtW = W.T @ W
    trace = [float(np.linalg.norm(y - W @ alpha))]
    for _ in range(max_iters):
        alpha *= Wty / (WtW @ alpha + EPS)
        res = float(np.linalg.norm(y - W @ alpha))
        prev = trace[-1]
        trace.append(res)
        if prev == 0.0 or (prev - res) / prev < rel_tol:
            break
    if return_trace:
        return alpha, trace
    return alpha


@dataclass
class LocationDictionary:
    location: tuple
    W: np.ndarray

    @property
    def r(self):
        return self.W.shape[1]

    def retrain(self, y, max_iters=200, rel_tol=1e-5):
        return retrain_patch(y, self, max_iters, rel_tol)


@dataclass
class DictionarySet:
    grid: GridSpec
    dictionaries: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.dictionaries) != len(self.grid):
            raise ValueError(f"{len(self.dictionaries)} dictionaries for a {self.grid.rows}x{self.grid.cols} grid")
        for dct in self.dictionaries:
            if np.any(dct.W < 0):
                raise ValueError(f"dictionary {dct.location} has negative entries")
            if np.any(~np.any(dct.W, axis=0)):
                raise ValueError(f"dictionary {dct.location} has an all-zero atom")

    @property
    def r(self):
        return self.dictionaries[0].r

    @property
    def d(self):
        return self.grid.patch ** 2

    def __getitem__(self, location):
        i, j = location
        return self.dictionaries[i * self.grid.cols + j]

    def save(self, path):
        g = self.grid
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, g.patch, g.overlap, g.rows, g.cols, self.r, self.d))
            for dct in self.dictionaries:
                fh.write(np.ascontiguousarray(dct.W, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        if not os.path.exists(path):
            raise FileNotFoundError(f"dictionary file not found: {path}")
        with open(path, "rb") as fh:
            data = fh.read()
        header = read_header(data)
        g = GridSpec(header["patch"], header["overlap"], header["rows"], header["cols"])
        d, r = header["d"], header["r"]
        block = d * r * 8
        body = data[_HEADER.size:]
        if len(body) != len(g) * block:
            raise ValueError(f"dictionary file {path} has {len(body)} payload bytes, expected {len(g) * block}")
        dicts = []
        for n, (i, j, _, _) in enumerate(g.positions()):
            W = np.frombuffer(body[n * block:(n + 1) * block], dtype="<f8").reshape(d, r).astype(np.float64)
            dicts.append(LocationDictionary((i, j), W))
        return cls(g, dicts, {"r": r})


def read_header(data):
    """Decode the fixed NMFD header from raw bytes."""
    if len(data) < _HEADER.size:
        raise ValueError("truncated dictionary header")
    magic, version, patch, overlap, rows, cols, r, d = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}, not an NMFD file")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported NMFD version {version}")
    if d != patch * patch:
        raise ValueError(f"header d={d} inconsistent with patch={patch}")
    return dict(version=version, patch=patch, overlap=overlap, rows=rows, cols=cols, r=r, d=d)


def location_matrices(sketches, grid):
    """Stack the co-located patches of every sketch into one (d, M) matrix per location."""
    per_image = [extract_patches(s, grid) for s in sketches]
    return [np.stack([pts[n].data.ravel() for pts in per_image], axis=1) for n in range(len(grid))]


def train_dictionaries(sketches, grid, r, max_iters=500, rel_tol=1e-5, seed=0, threads=1,
                       return_traces=False):
    """One NMF basis per grid location.

    Location ``n`` (row-major) is factorized with seed ``seed + n`` so that
    results do not depend on ``threads``.
    """
    sketches = [check_gray(s, "sketch") for s in sketches]
    if not sketches:
        raise ValueError("no training sketches")
    for s in sketches:
        if s.shape != grid.shape:
            raise ValueError(f"sketch shape {s.shape} does not match grid {grid.shape}")
    if len(sketches) < r:
        raise ValueError(f"rank exceeds training count (r={r}, M={len(sketches)})")
    mats = location_matrices(sketches, grid)

    def fit(n):
        return nmf_factorize(mats[n], r, max_iters, rel_tol, seed + n)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            fits = list(pool.map(fit, range(len(grid))))
    else:
        fits = [fit(n) for n in range(len(grid))]
    dicts = [LocationDictionary((i, j), W) for (i, j, _, _), (W, _, _) in zip(grid.positions(), fits)]
    meta = dict(M=len(sketches), r=r, max_iters=max_iters, seed=seed,
                final_objective=[tr[-1] for _, _, tr in fits],
                iterations=[len(tr) for _, _, tr in fits])
    ds = DictionarySet(grid, dicts, meta)
    if return_traces:
        return ds, [tr for _, _, tr in fits]
    return ds


def retrain_patch(y, dct, max_iters=200, rel_tol=1e-5):
    W = dct.W if isinstance(dct, LocationDictionary) else np.asarray(dct)
    y = np.asarray(y, dtype=np.float64)
    if y.size != W.shape[0]:
        raise ValueError(f"patch length {y.size} does not match dictionary dimension {W.shape[0]}")
    alpha = project_coefficients(y.ravel(), W, max_iters, rel_tol)
    return (W @ alpha).reshape(y.shape)


def retrain_sketch(crude, dicts, max_iters=200, rel_tol=1e-5, threads=1):
    """Retrain every patch of ``crude`` with its location's dictionary.

    Returns the list of retrained patches in grid order; assembly is left
    to the caller. Negative crude pixels are clipped to zero first.
    """
    crude = check_gray(crude, "crude sketch")
    grid = dicts.grid
    if crude.shape != grid.shape:
        raise ValueError(f"crude sketch shape {crude.shape} does not match dictionary grid {grid.shape}")
    patches = extract_patches(np.maximum(crude, 0.0), grid)

    def one(n):
        pt = patches[n]
        return Patch(pt.grid_row, pt.grid_col, pt.top, pt.left,
                     retrain_patch(pt.data, dicts.dictionaries[n], max_iters, rel_tol))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, range(len(patches))))
    return [one(n) for n in range(len(patches))]
