"""End-to-end composition of the three stages plus run configuration."""

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .blend import blend_full_coverage, blend_with_strategy
from .imagecore import check_gray
from .mrf import MrfParams, synthesize_crude
from .nmf import retrain_sketch, train_dictionaries
from .patching import Patch, make_grid

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    mrf_patch: int = 10
    mrf_overlap: int = 5
    k: int = 10
    search_radius: int = 5
    lam: float = 1.0
    bp_iters: int = 30
    damping: float = 0.5
    nmf_patch: int = 20
    nmf_overlap: int = 10
    rank: int = 20
    nmf_iters: int = 500
    rel_tol: float = 1e-5
    proj_iters: int = 200
    seed: int = 0
    kernel_a: float = 0.4
    levels: int = None
    threads: int = 1

    def validate(self):
        if self.nmf_patch != 2 * self.nmf_overlap:
            raise ValueError(f"nmf_patch must equal 2 * nmf_overlap (got {self.nmf_patch}, {self.nmf_overlap})")
        if not self.mrf_patch > self.mrf_overlap > 0:
            raise ValueError("need mrf_patch > mrf_overlap > 0")
        for name in ("k", "bp_iters", "rank", "nmf_iters", "proj_iters", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.search_radius < 0:
            raise ValueError("search_radius must be >= 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must lie in [0, 1)")
        if self.levels is not None and self.levels < 1:
            raise ValueError("levels must be positive")
        return self

    @property
    def mrf_params(self):
        return MrfParams(self.mrf_patch, self.mrf_overlap, self.k, self.search_radius,
                         self.lam, self.bp_iters, self.damping)

    def updated(self, **changes):
        """Copy with ``changes`` applied, ignoring ``None`` values."""
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_text(self):
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"


def _coerce(name, raw):
    ftype = {f.name: f for f in dataclasses.fields(PipelineConfig)}[name]
    default = ftype.default
    raw = raw.strip()
    if name == "levels":
        return None if raw.lower() in ("none", "auto", "") else int(raw)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    return float(raw)


def parse_config(text, base=None):
    """Parse ``key = value`` lines (``#`` comments) on top of ``base``."""
    cfg = base or PipelineConfig()
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    changes = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        try:
            changes[key] = _coerce(key, value)
        except ValueError:
            raise ValueError(f"config line {lineno}: bad value {value!r} for {key}") from None
    return dataclasses.replace(cfg, **changes)


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base)


def train_sketch_dictionaries(sketches, config, patch=None, overlap=None):
    patch = patch or config.nmf_patch
    overlap = overlap or config.nmf_overlap
    shape = check_gray(sketches[0]).shape
    grid = make_grid(shape[0], shape[1], patch, overlap)
    return train_dictionaries(sketches, grid, config.rank, config.nmf_iters, config.rel_tol,
                              config.seed, config.threads)


@dataclass
class SynthesisResult:
    crude: object
    retrained: list
    sketch: object
    passes: list = field(default_factory=list)


def synthesize(photo, training, dicts, config=None, strategy="spline", crude=None):
    """Photo to sketch: MRF crude sketch, NMF retraining, blending.

    ``crude`` may be passed to skip stage 1.
    """
    config = (config or PipelineConfig()).validate()
    photo = check_gray(photo, "photo")
    if photo.shape != dicts.grid.shape:
        raise ValueError(f"photo shape {photo.shape} does not match the dictionary grid {dicts.grid.shape}")
    if crude is None:
        crude = synthesize_crude(photo, training, config.mrf_params)
    retrained = retrain_sketch(crude, dicts, config.proj_iters, config.rel_tol, config.threads)
    passes = []
    if strategy == "spline":
        sketch = blend_full_coverage(retrained, dicts.grid, config.levels, config.kernel_a, snapshots=passes)
    else:
        sketch = blend_with_strategy(retrained, dicts.grid, strategy, config.levels, config.kernel_a)
    return SynthesisResult(crude, retrained, sketch, passes)


def perturb_patches(patches, sigma, seed):
    """Add one seeded random intensity offset per patch."""
    if sigma <= 0:
        return patches
    rng = np.random.default_rng(seed)
    offsets = rng.normal(0.0, sigma, size=len(patches))
    return [Patch(p.grid_row, p.grid_col, p.top, p.left, p.data + o) for p, o in zip(patches, offsets)]


def blend_compare(photo, pairs, dicts, cfg, patch_noise=0.0):
    """The four assembly variants of one photo, keyed by name.

    ``spline10`` retrains the crude sketch with dictionaries at half the
    patch size, learned from the same training sketches.
    """
    crude = synthesize_crude(photo, pairs, cfg.mrf_params)
    grid = dicts.grid
    retrained = perturb_patches(retrain_sketch(crude, dicts, cfg.proj_iters, cfg.rel_tol, cfg.threads),
                                patch_noise, cfg.seed)
    out = {name: blend_with_strategy(retrained, grid, name, cfg.levels, cfg.kernel_a)
           for name in ("average", "mincut")}
    small_patch, small_overlap = grid.patch // 2, grid.overlap // 2
    small_rank = min(cfg.rank, len(pairs), small_patch * small_patch)
    small_dicts = train_sketch_dictionaries([p.sketch for p in pairs], cfg.updated(rank=small_rank),
                                            small_patch, small_overlap)
    small = perturb_patches(retrain_sketch(crude, small_dicts, cfg.proj_iters, cfg.rel_tol, cfg.threads),
                            patch_noise, cfg.seed + 1)
    out[f"spline{small_patch}"] = blend_full_coverage(small, small_dicts.grid, None, cfg.kernel_a)
    out[f"spline{grid.patch}"] = blend_full_coverage(retrained, grid, cfg.levels, cfg.kernel_a)
    return out
