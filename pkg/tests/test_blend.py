import numpy as np
import pytest

from facesketch.blend import (BlendPlan, blend_full_coverage, blend_with_strategy, grid_boundaries,
                              make_patch_mask, pass1_boundaries, plan_passes, seam_energy)
from facesketch.dataset import smooth_field
from facesketch.patching import GridSpec, Patch, extract_patches, make_grid
from facesketch.pipeline import perturb_patches


def rms(a, b):
    return np.sqrt(np.mean((a - b) ** 2))


def test_plan_3x3_split():
    plan = plan_passes(make_grid(40, 40, 20, 10))
    assert plan.pass1 == ((0, 0), (0, 2), (2, 0), (2, 2))
    assert plan.pass2 == ((0, 1), (1, 0), (1, 2), (2, 1))
    assert plan.pass3 == ((1, 1),)


def test_plan_1x1():
    plan = plan_passes(make_grid(20, 20, 20, 10))
    assert plan == BlendPlan(((0, 0),), (), ())


def test_plan_5x5_by_enumeration():
    grid = make_grid(60, 60, 20, 10)
    plan = plan_passes(grid)
    counts = [0, 0, 0]
    for i in range(5):
        for j in range(5):
            if i % 2 == 0 and j % 2 == 0:
                counts[0] += 1
            elif i % 2 == 1 and j % 2 == 1:
                counts[2] += 1
            else:
                counts[1] += 1
    assert [len(p) for p in plan] == counts == [9, 12, 4]
    cells = [c for p in plan for c in p]
    assert sorted(cells) == [(i, j) for i in range(5) for j in range(5)]
    for p in plan:
        assert list(p) == sorted(p)


def test_pass1_tiles_canvas():
    grid = make_grid(100, 60, 20, 10)
    count = np.zeros(grid.shape, dtype=int)
    for i, j in plan_passes(grid).pass1:
        count[i * 10:i * 10 + 20, j * 10:j * 10 + 20] += 1
    assert np.all(count == 1)


def test_plan_errors():
    with pytest.raises(ValueError):
        plan_passes(make_grid(50, 50, 20, 15))
    with pytest.raises(ValueError):
        plan_passes(make_grid(50, 50, 20, 10))  # 4x4
    with pytest.raises(ValueError):
        plan_passes(make_grid(40, 50, 20, 10))  # 3x4


def test_mask_examples():
    m = make_patch_mask(20, 10)
    assert m.sum() == 100
    assert np.all(m[5:15, 5:15] == 1)
    assert np.all(make_patch_mask(20, 10, True, True, True, True) == 1)
    top = make_patch_mask(20, 10, top=True)
    expected = np.zeros((20, 20))
    for y in range(20):
        for x in range(20):
            # rasterize the rule at pixel centres: distance to each non-canvas edge >= 5
            d = [20 - (y + 0.5), x + 0.5, 20 - (x + 0.5)]
            expected[y, x] = float(min(d) >= 5)
    np.testing.assert_array_equal(top, expected)
    assert np.array_equal(np.nonzero(top.any(axis=1))[0], np.arange(15))
    with pytest.raises(ValueError):
        make_patch_mask(10, 10)


@pytest.mark.parametrize("shape", [(20, 20), (40, 40), (60, 60), (100, 60)])
def test_idempotent_on_consistent_patches(shape):
    img = np.random.default_rng(sum(shape)).random(shape)
    grid = make_grid(*shape, 20, 10)
    out = blend_full_coverage(extract_patches(img, grid), grid)
    assert rms(out, img) < 1e-8


def test_single_patch_is_output():
    grid = make_grid(20, 20, 20, 10)
    data = np.random.default_rng(0).random((20, 20))
    out = blend_full_coverage([Patch(0, 0, 0, 0, data)], grid)
    np.testing.assert_array_equal(out, data)


def test_snapshots_and_pass1_write():
    grid = make_grid(60, 60, 20, 10)
    img = smooth_field(np.random.default_rng(1), 60, 60)
    pts = perturb_patches(extract_patches(img, grid), 0.05, 1)
    snaps = []
    out = blend_full_coverage(pts, grid, snapshots=snaps)
    assert len(snaps) == 3
    np.testing.assert_array_equal(snaps[2], out)
    cells = {(p.grid_row, p.grid_col): p.data for p in pts}
    for i, j in plan_passes(grid).pass1:
        np.testing.assert_array_equal(snaps[0][i * 10:i * 10 + 20, j * 10:j * 10 + 20], cells[i, j])


def test_deterministic():
    grid = make_grid(60, 60, 20, 10)
    pts = perturb_patches(extract_patches(np.full((60, 60), 0.5), grid), 0.05, 3)
    np.testing.assert_array_equal(blend_full_coverage(pts, grid), blend_full_coverage(pts, grid))


def seam_series(img, grid, seed, sigma=0.05):
    pts = perturb_patches(extract_patches(img, grid), sigma, seed)
    snaps = []
    blend_full_coverage(pts, grid, snapshots=snaps)
    return snaps


@pytest.mark.parametrize("shape", [(40, 40), (60, 60), (100, 100)])
def test_seam_energy_monotone_across_passes_flat_content(shape):
    grid = make_grid(*shape, 20, 10)
    bounds = pass1_boundaries(grid)
    for seed in range(50):
        snaps = seam_series(np.full(shape, 0.5), grid, seed)
        e = [seam_energy(s, grid, bounds) for s in snaps]
        assert e[2] <= e[1] <= e[0], (seed, e)


@pytest.mark.parametrize("shape", [(40, 40), (60, 60)])
def test_seam_error_monotone_across_passes_textured_content(shape):
    # On textured content the raw metric mixes the image's own gradient into
    # the jumps; the blend error (output - source) isolates the seams.
    grid = make_grid(*shape, 20, 10)
    bounds = pass1_boundaries(grid)
    for seed in range(50):
        img = smooth_field(np.random.default_rng(seed), *shape)
        snaps = seam_series(img, grid, seed)
        e = [seam_energy(s - img, grid, bounds) for s in snaps]
        assert e[2] <= e[1] <= e[0], (seed, e)


def test_3x3_seams_confined_then_removed():
    grid = make_grid(40, 40, 20, 10)
    outside = np.r_[0:10, 30:40]
    for seed in range(50):
        snaps = seam_series(np.full((40, 40), 0.5), grid, seed)
        col = [np.abs(s[:, 20] - s[:, 19]) for s in snaps]
        row = [np.abs(s[20] - s[19]) for s in snaps]
        peak = max(col[0].max(), row[0].max())
        # after pass 2 the jumps left are near the canvas centre (pilot: <= 0.049 of the pass-1 peak)
        assert max(col[1][outside].max(), row[1][outside].max()) < 0.1 * peak
        e = [seam_energy(s, grid, pass1_boundaries(grid)) for s in snaps]
        # pilot: pass-3 energy <= 0.038 of pass 1
        assert e[2] < 0.05 * e[0]


def test_overshoot_relative_to_inputs():
    for shape in [(40, 40), (60, 60)]:
        grid = make_grid(*shape, 20, 10)
        for seed in range(20):
            img = smooth_field(np.random.default_rng(seed), *shape)
            pts = perturb_patches(extract_patches(img, grid), 0.05, seed)
            out = blend_full_coverage(pts, grid)
            lo = min(p.data.min() for p in pts)
            hi = max(p.data.max() for p in pts)
            assert out.min() >= lo - 0.05 and out.max() <= hi + 0.05


def test_output_range_on_retrained_patches(corpus, training):
    from facesketch.mrf import synthesize_crude
    from facesketch.nmf import retrain_sketch, train_dictionaries
    grid = make_grid(60, 60, 20, 10)
    dicts = train_dictionaries([p.sketch for p in training], grid, 20)
    # offset noise pushes the inputs themselves outside [0, 1]; that case
    # is covered relative to the input range above
    for k in (30, 0, 5):
        pts = retrain_sketch(synthesize_crude(corpus[k].photo, training), dicts)
        out = blend_full_coverage(pts, grid)
        assert out.min() >= -0.05 and out.max() <= 1.05


@pytest.mark.parametrize("strategy", ["average", "mincut", "spline"])
def test_strategies_reproduce_consistent_source(strategy):
    img = np.random.default_rng(7).random((60, 60))
    grid = make_grid(60, 60, 20, 10)
    out = blend_with_strategy(extract_patches(img, grid), grid, strategy)
    assert rms(out, img) < 1e-8


def test_strategy_errors():
    grid = make_grid(50, 50, 20, 10)
    pts = extract_patches(np.zeros((50, 50)), grid)
    with pytest.raises(ValueError):
        blend_with_strategy(pts, grid, "spline")
    blend_with_strategy(pts, grid, "average")
    with pytest.raises(ValueError):
        blend_with_strategy(pts, grid, "feather")


def test_spline_beats_average_on_offset_patches():
    grid = make_grid(60, 60, 20, 10)
    img = np.full((60, 60), 0.5)
    for seed in range(10):
        pts = perturb_patches(extract_patches(img, grid), 0.05, seed)
        spline = seam_energy(blend_with_strategy(pts, grid, "spline"), grid)
        average = seam_energy(blend_with_strategy(pts, grid, "average"), grid)
        assert spline < average


def test_grid_boundaries():
    grid = make_grid(40, 40, 20, 10)
    assert grid_boundaries(grid) == ([10, 20, 30], [10, 20, 30])
    assert pass1_boundaries(grid) == ([20], [20])
    assert grid_boundaries(GridSpec(20, 10, 1, 1)) == ([], [])


def test_seam_energy_examples():
    grid = make_grid(40, 40, 20, 10)
    assert seam_energy(np.full((40, 40), 0.3), grid) == 0.0
    img = np.zeros((40, 40))
    img[:, 20:] = 1.0
    # one of three column boundaries carries a unit jump; row boundaries carry none
    assert seam_energy(img, grid) == pytest.approx(1 / 6)
    assert seam_energy(img, grid, pass1_boundaries(grid)) == pytest.approx(0.5)
    ramp = np.tile(np.arange(40.0), (40, 1))
    assert seam_energy(ramp, grid) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        seam_energy(np.zeros((20, 20)), grid)
