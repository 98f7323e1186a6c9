"""scikit-learn front end for the photo-to-sketch pipeline.

``SketchSynthesizer`` is fitted on aligned photo/sketch stacks and
transforms photos into sketches, so it drops into ``Pipeline`` and
``clone`` like any other transformer.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .imagecore import check_gray, crop_to_grid, rmse
from .mrf import TrainingPair
from .pipeline import PipelineConfig, synthesize, train_sketch_dictionaries


def check_image_stack(X, name="X"):
    """Coerce ``X`` to a float64 array of shape (n_images, height, width).

    A single 2-D image is promoted to a stack of one.
    """
    if isinstance(X, (list, tuple)):
        X = [check_gray(x, name) for x in X]
        shapes = {x.shape for x in X}
        if len(shapes) > 1:
            raise ValueError(f"{name} images differ in size: {sorted(shapes)}")
        X = np.stack(X) if X else np.empty((0, 1, 1))
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"{name} must be an image or a stack of images, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


class SketchSynthesizer(TransformerMixin, BaseEstimator):
    """Patch-based photo-to-sketch transformer.

    Parameters mirror :class:`~facesketch.pipeline.PipelineConfig`.
    ``strategy`` selects the final assembly: ``"spline"`` (full-coverage
    multiresolution spline), ``"average"`` or ``"mincut"``. With
    ``crop=True`` inputs are center-cropped to the nearest grid-valid size
    instead of being rejected.
    """

    def __init__(self, mrf_patch=10, mrf_overlap=5, n_candidates=10, search_radius=5, smoothness=1.0,
                 bp_iters=30, damping=0.5, nmf_patch=20, nmf_overlap=10, n_components=20,
                 max_iter=500, tol=1e-5, proj_iter=200, kernel_a=0.4, levels=None,
                 strategy="spline", crop=False, random_state=0, n_jobs=1):
        self.mrf_patch = mrf_patch
        self.mrf_overlap = mrf_overlap
        self.n_candidates = n_candidates
        self.search_radius = search_radius
        self.smoothness = smoothness
        self.bp_iters = bp_iters
        self.damping = damping
        self.nmf_patch = nmf_patch
        self.nmf_overlap = nmf_overlap
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.proj_iter = proj_iter
        self.kernel_a = kernel_a
        self.levels = levels
        self.strategy = strategy
        self.crop = crop
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _config(self):
        return PipelineConfig(
            mrf_patch=self.mrf_patch, mrf_overlap=self.mrf_overlap, k=self.n_candidates,
            search_radius=self.search_radius, lam=self.smoothness, bp_iters=self.bp_iters,
            damping=self.damping, nmf_patch=self.nmf_patch, nmf_overlap=self.nmf_overlap,
            rank=self.n_components, nmf_iters=self.max_iter, rel_tol=self.tol,
            proj_iters=self.proj_iter, seed=int(self.random_state or 0), kernel_a=self.kernel_a,
            levels=self.levels, threads=max(int(self.n_jobs or 1), 1),
        ).validate()

    def _prepare(self, X):
        if not self.crop:
            return X
        return np.stack([crop_to_grid(crop_to_grid(x, self.nmf_patch, self.nmf_overlap),
                                      self.mrf_patch, self.mrf_overlap) for x in X])

    def fit(self, X, y):
        """Learn from aligned photos ``X`` and artist sketches ``y``."""
        X = self._prepare(check_image_stack(X, "X"))
        y = self._prepare(check_image_stack(y, "y"))
        if X.shape != y.shape:
            raise ValueError(f"photos {X.shape} and sketches {y.shape} are not aligned")
        config = self._config()
        self.config_ = config
        self.training_pairs_ = [TrainingPair(p, s) for p, s in zip(X, y)]
        self.dictionaries_ = train_sketch_dictionaries(list(y), config)
        self.grid_ = self.dictionaries_.grid
        self.image_shape_ = X.shape[1:]
        return self

    def transform(self, X):
        check_is_fitted(self, "dictionaries_")
        X = self._prepare(check_image_stack(X, "X"))
        if X.shape[1:] != self.image_shape_:
            raise ValueError(f"expected images of shape {self.image_shape_}, got {X.shape[1:]}")
        return np.stack([synthesize(x, self.training_pairs_, self.dictionaries_, self.config_,
                                    self.strategy).sketch for x in X])

    predict = transform

    def score(self, X, y):
        """Negative mean RMSE between synthesized and reference sketches."""
        y = self._prepare(check_image_stack(y, "y"))
        pred = self.transform(X)
        return -float(np.mean([rmse(a, b) for a, b in zip(pred, y)]))
