"""Stage 1: crude sketch by MAP labeling of a patch-grid MRF.

Every grid node picks one candidate sketch patch from the training set.
The energy is

    E(x) = sum_i data(x_i) / patch**2
         + lam * sum_(i,j) overlap_ssd(x_i, x_j) / (overlap * patch)

and is minimized with synchronous, damped min-sum loopy belief
propagation. :func:`brute_force_map` enumerates labelings exhaustively and
serves as the oracle on small instances.
"""

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imagecore import check_gray
from .patching import Patch, assemble_average, make_grid

logger = logging.getLogger(__name__)

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


@dataclass
class TrainingPair:
    photo: np.ndarray
    sketch: np.ndarray

    def __post_init__(self):
        self.photo = check_gray(self.photo, "photo")
        self.sketch = check_gray(self.sketch, "sketch")
        if self.photo.shape != self.sketch.shape:
            raise ValueError(f"photo {self.photo.shape} and sketch {self.sketch.shape} are not aligned")


@dataclass
class CandidateSet:
    """The K candidates of one grid node, best first.

    ``photo_patches`` and ``sketch_patches`` have shape (K, patch, patch);
    ``data_costs`` holds the squared L2 distance of each photo patch to the
    query patch. ``source`` records (pair index, top, left) per candidate.
    """

    photo_patches: np.ndarray
    sketch_patches: np.ndarray
    data_costs: np.ndarray
    source: np.ndarray
    truncated: bool = False

    def __len__(self):
        return len(self.data_costs)


@dataclass
class MrfModel:
    """Grid-structured labeling problem with precomputed cost tables.

    ``unary[n]`` is the cost vector of node ``n`` (row-major node index);
    ``pairwise[(a, b)]`` with ``a < b`` is the ``len(unary[a]) x
    len(unary[b])`` table of already-weighted pairwise costs.
    """

    rows: int
    cols: int
    unary: list
    pairwise: dict
    grid: object = None
    candidates: list = None
    lam: float = 1.0
    neighbors: list = field(init=False, repr=False)

    def __post_init__(self):
        n = self.rows * self.cols
        if len(self.unary) != n:
            raise ValueError(f"expected {n} unary vectors, got {len(self.unary)}")
        self.unary = [np.asarray(u, dtype=np.float64) for u in self.unary]
        if any(u.ndim != 1 or u.size == 0 for u in self.unary):
            raise ValueError("every node needs at least one candidate")
        self.neighbors = [[] for _ in range(n)]
        for (a, b), table in self.pairwise.items():
            if not a < b:
                raise ValueError(f"pairwise key {(a, b)} must be ordered a < b")
            if np.shape(table) != (self.unary[a].size, self.unary[b].size):
                raise ValueError(f"pairwise table {(a, b)} has shape {np.shape(table)}")
            self.neighbors[a].append(b)
            self.neighbors[b].append(a)

    @property
    def n_nodes(self):
        return self.rows * self.cols

    def edge_table(self, src, dst):
        """Pairwise table indexed ``[label_src, label_dst]``."""
        if src < dst:
            return self.pairwise[src, dst]
        return self.pairwise[dst, src].T

    def energy(self, labels):
        labels = np.asarray(labels)
        e = sum(float(u[x]) for u, x in zip(self.unary, labels))
        for (a, b), table in self.pairwise.items():
            e += float(table[labels[a], labels[b]])
        return e


def grid_edges(rows, cols):
    """4-neighbour edges ``(a, b, direction)`` with ``a < b``, row-major nodes."""
    edges = []
    for i in range(rows):
        for j in range(cols):
            a = i * cols + j
            if j + 1 < cols:
                edges.append((a, a + 1, HORIZONTAL))
            if i + 1 < rows:
                edges.append((a, a + cols, VERTICAL))
    return edges


def random_model(rows, cols, k, rng, scale=1.0):
    """Random-cost grid model; ``k`` is an int or a per-node sequence."""
    ks = [k] * (rows * cols) if np.isscalar(k) else list(k)
    unary = [rng.random(kk) * scale for kk in ks]
    pairwise = {(a, b): rng.random((ks[a], ks[b])) * scale for a, b, _ in grid_edges(rows, cols)}
    return MrfModel(rows, cols, unary, pairwise)


def build_candidates(photo, grid, training, k=10, search_radius=5):
    """Retrieve the ``k`` best-matching training patches for every grid node.

    For node with corner (t, l) the pool is every training photo patch whose
    corner lies within Chebyshev distance ``search_radius`` of (t, l),
    clipped to the image. Ties in distance keep pool order (pair, top, left).
    """
    photo = check_gray(photo, "photo")
    if not training:
        raise ValueError("empty training set")
    if k < 1:
        raise ValueError("k must be >= 1")
    if photo.shape != grid.shape:
        raise ValueError(f"photo shape {photo.shape} does not match grid {grid.shape}")
    p = grid.patch
    photo_windows, sketch_windows = [], []
    for n, pair in enumerate(training):
        if pair.photo.shape[0] < photo.shape[0] or pair.photo.shape[1] < photo.shape[1]:
            raise ValueError(f"training pair {n} ({pair.photo.shape}) is smaller than the photo {photo.shape}")
        photo_windows.append(sliding_window_view(pair.photo, (p, p)))
        sketch_windows.append(sliding_window_view(pair.sketch, (p, p)))

    result = []
    warned = False
    for _, _, t, l in grid.positions():
        query = photo[t:t + p, l:l + p]
        blocks, sketches, sources = [], [], []
        for n, (pw, sw) in enumerate(zip(photo_windows, sketch_windows)):
            t0, t1 = max(t - search_radius, 0), min(t + search_radius, pw.shape[0] - 1)
            l0, l1 = max(l - search_radius, 0), min(l + search_radius, pw.shape[1] - 1)
            blocks.append(pw[t0:t1 + 1, l0:l1 + 1].reshape(-1, p, p))
            sketches.append(sw[t0:t1 + 1, l0:l1 + 1].reshape(-1, p, p))
            tt, ll = np.meshgrid(np.arange(t0, t1 + 1), np.arange(l0, l1 + 1), indexing="ij")
            sources.append(np.stack([np.full(tt.size, n), tt.ravel(), ll.ravel()], axis=1))
        blocks = np.concatenate(blocks)
        sketches = np.concatenate(sketches)
        sources = np.concatenate(sources)
        costs = np.sum((blocks - query) ** 2, axis=(1, 2))
        order = np.argsort(costs, kind="stable")[:k]
        truncated = len(costs) < k
        if truncated and not warned:
            warnings.warn(f"only {len(costs)} candidates available for k={k}; keeping all", stacklevel=2)
            warned = True
        result.append(CandidateSet(blocks[order].copy(), sketches[order].copy(), costs[order],
                                   sources[order], truncated))
    return result


def overlap_strips(a, b, direction, overlap):
    """The two sketch-patch regions shared by 4-adjacent nodes.

    ``a`` is the left (horizontal) or upper (vertical) node.
    """
    if direction == HORIZONTAL:
        return a[..., :, -overlap:], b[..., :, :overlap]
    if direction == VERTICAL:
        return a[..., -overlap:, :], b[..., :overlap, :]
    raise ValueError(f"unknown direction {direction!r}")


def smoothness_cost(a, b, direction, grid):
    """Squared L2 difference of two sketch patches over their shared strip.

    ``a`` and ``b`` may be raw patch arrays or objects with a
    ``sketch_patch`` attribute.
    """
    a = np.asarray(getattr(a, "sketch_patch", a), dtype=np.float64)
    b = np.asarray(getattr(b, "sketch_patch", b), dtype=np.float64)
    sa, sb = overlap_strips(a, b, direction, grid.overlap)
    return float(np.sum((sa - sb) ** 2))


def _pair_table(ca, cb, direction, overlap):
    sa, sb = overlap_strips(ca.sketch_patches, cb.sketch_patches, direction, overlap)
    fa = sa.reshape(len(ca), -1)
    fb = sb.reshape(len(cb), -1)
    d = np.sum(fa ** 2, 1)[:, None] + np.sum(fb ** 2, 1)[None, :] - 2.0 * fa @ fb.T
    return np.maximum(d, 0.0)


def build_model(candidates, grid, lam=1.0):
    """Assemble normalized cost tables from per-node candidates."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if len(candidates) != len(grid):
        raise ValueError(f"{len(candidates)} candidate sets for a grid of {len(grid)} nodes")
    p, ov = grid.patch, grid.overlap
    unary = [c.data_costs / (p * p) for c in candidates]
    pairwise = {}
    for a, b, direction in grid_edges(grid.rows, grid.cols):
        pairwise[a, b] = lam * _pair_table(candidates[a], candidates[b], direction, ov) / (ov * p)
    return MrfModel(grid.rows, grid.cols, unary, pairwise, grid=grid, candidates=candidates, lam=lam)


@dataclass
class BPResult:
    labels: np.ndarray
    energy: float
    converged: bool
    iterations: int


def _belief_argmin(model, messages):
    labels = np.empty(model.n_nodes, dtype=np.int64)
    for i in range(model.n_nodes):
        b = model.unary[i].copy()
        for k in model.neighbors[i]:
            b += messages[k, i]
        labels[i] = int(np.argmin(b))
    return labels


def bp_map(model, max_iters=30, damping=0.5, tol=1e-6):
    """Min-sum loopy belief propagation.

    Messages start at zero and are updated synchronously as
    ``damping * old + (1 - damping) * new``, each shifted to minimum zero.
    Beliefs are decoded by argmin (lowest index on ties) after every sweep
    and the lowest-energy decoding seen is returned. The zero-message
    decoding (per-node data argmin) is part of that history, so the result
    never does worse than it.
    """
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    directed = [(i, j) for i in range(model.n_nodes) for j in model.neighbors[i]]
    messages = {(i, j): np.zeros(model.unary[j].size) for i, j in directed}
    tables = {(i, j): model.edge_table(i, j) for i, j in directed}

    best = _belief_argmin(model, messages)
    best_e = model.energy(best)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        incoming = []
        for i in range(model.n_nodes):
            total = model.unary[i].copy()
            for k in model.neighbors[i]:
                total += messages[k, i]
            incoming.append(total)
        delta = 0.0
        updated = {}
        for i, j in directed:
            h = incoming[i] - messages[j, i]
            m = np.min(h[:, None] + tables[i, j], axis=0)
            m -= m.min()
            new = damping * messages[i, j] + (1.0 - damping) * m
            new -= new.min()
            delta = max(delta, float(np.max(np.abs(new - messages[i, j]))))
            updated[i, j] = new
        messages = updated
        labels = _belief_argmin(model, messages)
        e = model.energy(labels)
        if e < best_e:
            best, best_e = labels, e
        if delta < tol:
            converged = True
            break
    if not converged:
        logger.debug("bp_map stopped after %d sweeps without converging", it)
    return BPResult(best, best_e, converged, it)


def brute_force_map(model, limit=10 ** 6):
    """Exhaustive MAP; the lexicographically smallest minimizer wins ties."""
    sizes = [u.size for u in model.unary]
    if np.prod(sizes, dtype=float) > limit:
        raise ValueError(f"instance too large for exhaustive search ({np.prod(sizes, dtype=float):.3g} labelings)")
    best, best_e = None, np.inf
    for labels in itertools.product(*(range(s) for s in sizes)):
        e = model.energy(labels)
        if e < best_e:
            best, best_e = labels, e
    return BPResult(np.array(best, dtype=np.int64), best_e, True, 0)


@dataclass
class MrfParams:
    patch: int = 10
    overlap: int = 5
    k: int = 10
    search_radius: int = 5
    lam: float = 1.0
    max_iters: int = 30
    damping: float = 0.5


def synthesize_crude(photo, training, params=None, return_model=False):
    """Crude sketch: retrieve candidates, solve the MRF, average the chosen sketch patches."""
    params = params or MrfParams()
    photo = check_gray(photo, "photo")
    grid = make_grid(photo.shape[0], photo.shape[1], params.patch, params.overlap)
    candidates = build_candidates(photo, grid, training, params.k, params.search_radius)
    model = build_model(candidates, grid, params.lam)
    res = bp_map(model, params.max_iters, params.damping)
    patches = [Patch(i, j, t, l, candidates[n].sketch_patches[res.labels[n]])
               for n, (i, j, t, l) in enumerate(grid.positions())]
    crude = assemble_average(patches, grid)
    if return_model:
        return crude, model, res
    return crude
