import itertools
import os

import numpy as np
import pytest

from facesketch.nmf import (MAGIC, DictionarySet, LocationDictionary, nmf_factorize, project_coefficients,
                            read_header, retrain_patch, retrain_sketch, train_dictionaries)
from facesketch.patching import extract_patches, make_grid


def nnls_oracle(y, W):
    """Exhaustive active-set NNLS: least squares on every support, keep the best feasible."""
    best, best_res = np.zeros(W.shape[1]), np.linalg.norm(y)
    for size in range(1, W.shape[1] + 1):
        for support in itertools.combinations(range(W.shape[1]), size):
            sol, *_ = np.linalg.lstsq(W[:, support], y, rcond=None)
            if np.any(sol < 0):
                continue
            alpha = np.zeros(W.shape[1])
            alpha[list(support)] = sol
            res = np.linalg.norm(y - W @ alpha)
            if res < best_res:
                best, best_res = alpha, res
    return best


def power_sigma1(V, iters=500):
    x = np.ones(V.shape[1])
    for _ in range(iters):
        x = V.T @ (V @ x)
        x /= np.linalg.norm(x)
    return np.linalg.norm(V @ x)


@pytest.mark.parametrize("seed", range(50))
def test_objective_monotone_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    d, M = rng.integers(5, 40, size=2)
    r = int(rng.integers(1, min(d, M) + 1))
    V = rng.random((d, M)) ** 2

    def check(W, H):
        assert np.all(W >= 0) and np.all(H >= 0)

    W, H, trace = nmf_factorize(V, r, max_iters=100, rel_tol=0, seed=seed, callback=check)
    assert np.all(np.diff(trace) <= 1e-9)
    np.testing.assert_allclose(np.linalg.norm(W, axis=0), 1.0)
    assert trace[-1] == pytest.approx(np.linalg.norm(V - W @ H), rel=1e-9)


def test_exact_rank_recovery():
    rng = np.random.default_rng(0)
    V = rng.random((60, 5)) @ rng.random((5, 30))
    _, _, trace = nmf_factorize(V, 5, max_iters=2000, rel_tol=0)
    assert trace[-1] < 1e-3 * np.linalg.norm(V)


def test_rank1_recovery_matches_power_iteration():
    rng = np.random.default_rng(1)
    V = np.outer(rng.random(50), rng.random(30))
    W, H, trace = nmf_factorize(V, 1)
    assert trace[-1] < 1e-6 * np.linalg.norm(V)
    # best rank-1 error is sqrt(||V||^2 - sigma1^2), zero for an outer product
    sigma1 = power_sigma1(V)
    assert np.linalg.norm(W @ H) == pytest.approx(sigma1, rel=1e-9)


def test_rank1_of_general_matrix_reaches_best_approximation():
    V = np.random.default_rng(2).random((20, 15))
    _, _, trace = nmf_factorize(V, 1, max_iters=2000, rel_tol=0)
    best = np.sqrt(np.linalg.norm(V) ** 2 - power_sigma1(V) ** 2)
    assert trace[-1] == pytest.approx(best, rel=1e-6)


def test_zero_data():
    W, H, trace = nmf_factorize(np.zeros((10, 4)), 2)
    assert trace == [0.0]
    assert not np.any(H)
    assert np.all(W > 0)
    np.testing.assert_allclose(np.linalg.norm(W, axis=0), 1.0)


def test_factorize_errors():
    with pytest.raises(ValueError):
        nmf_factorize(-np.ones((3, 3)), 1)
    with pytest.raises(ValueError):
        nmf_factorize(np.ones((3, 4)), 4)
    with pytest.raises(ValueError):
        nmf_factorize(np.ones((3, 4)), 0)


def test_factorize_seeded():
    V = np.random.default_rng(3).random((12, 9))
    a = nmf_factorize(V, 3, seed=7)
    b = nmf_factorize(V, 3, seed=7)
    np.testing.assert_array_equal(a[0], b[0])
    assert not np.array_equal(a[0], nmf_factorize(V, 3, seed=8)[0])


def test_single_atom_target_disjoint_atoms():
    # atoms with disjoint supports: W^T W is diagonal and lstsq is nonnegative
    W = np.zeros((12, 3))
    rng = np.random.default_rng(4)
    for k in range(3):
        W[4 * k:4 * k + 4, k] = rng.uniform(0.2, 1.0, 4)
    for k in range(3):
        y = W[:, k].copy()
        alpha = project_coefficients(y, W)
        ls, *_ = np.linalg.lstsq(W, y, rcond=None)
        assert np.all(ls >= -1e-12)
        assert np.linalg.norm(W @ alpha - y) < 1e-6 * np.linalg.norm(y)
        np.testing.assert_allclose(alpha, ls, atol=1e-9)


def test_single_atom_target_dense_atoms_converges():
    rng = np.random.default_rng(5)
    W = rng.uniform(0.1, 1.0, (100, 6))
    y = W[:, 2]
    _, trace = project_coefficients(y, W, max_iters=5000, rel_tol=0, return_trace=True)
    assert np.all(np.diff(trace) <= 1e-12)
    assert trace[-1] < 1e-3 * np.linalg.norm(y)


def test_projection_zero_target():
    W = np.random.default_rng(6).random((16, 4)) + 0.1
    alpha = project_coefficients(np.zeros(16), W)
    assert not np.any(alpha)


@pytest.mark.parametrize("seed", range(10))
def test_projection_matches_nnls_oracle(seed):
    rng = np.random.default_rng(seed)
    W = rng.random((4, 2)) + 0.05
    y = rng.random(4)
    alpha, trace = project_coefficients(y, W, max_iters=200_000, rel_tol=1e-13, return_trace=True)
    np.testing.assert_allclose(alpha, nnls_oracle(y, W), atol=1e-4)
    assert np.all(np.diff(trace) <= 1e-12)


def test_projection_in_cone_residual_vanishes():
    rng = np.random.default_rng(7)
    W = rng.random((30, 3)) + 0.1
    y = W @ np.array([0.5, 1.0, 0.3])
    alpha = project_coefficients(y, W, max_iters=20_000, rel_tol=0)
    assert np.linalg.norm(W @ alpha - y) < 1e-6 * np.linalg.norm(y)


def test_projection_scale_invariance():
    rng = np.random.default_rng(8)
    W = rng.uniform(0.1, 1.0, (400, 20))
    scale = rng.uniform(0.2, 5.0, 20)
    y = rng.random(400)
    a1 = project_coefficients(y, W)
    a2 = project_coefficients(y, W * scale)
    assert np.max(np.abs(W @ a1 - (W * scale) @ a2)) < 1e-12


def test_projection_errors():
    W = np.ones((4, 2))
    with pytest.raises(ValueError):
        project_coefficients(np.ones(5), W)
    with pytest.raises(ValueError):
        project_coefficients(-np.ones(4), W)
    with pytest.raises(ValueError):
        project_coefficients(np.ones(4), np.array([[1.0, 0], [1, 0], [1, 0], [1, 0]]))


def test_retrain_patch_representable_and_zero():
    rng = np.random.default_rng(9)
    W = np.zeros((25, 5))
    for k in range(5):
        W[5 * k:5 * k + 5, k] = rng.uniform(0.2, 1, 5)
    y = (W @ np.array([0.3, 0, 1.2, 0.5, 0.1])).reshape(5, 5)
    out = retrain_patch(y, LocationDictionary((0, 0), W))
    assert out.shape == (5, 5)
    assert np.sqrt(np.mean((out - y) ** 2)) < 1e-5
    assert not np.any(retrain_patch(np.zeros((5, 5)), W))
    with pytest.raises(ValueError):
        retrain_patch(np.zeros((4, 4)), W)


def test_retrain_patch_denoises_salt(corpus, training):
    grid = make_grid(60, 60, 20, 10)
    dicts = train_dictionaries([p.sketch for p in training], grid, 20)
    rng = np.random.default_rng(5)
    ratios = []
    for n, pt in enumerate(extract_patches(corpus[30].sketch, grid)):
        clean = pt.data
        noisy = clean.copy()
        noisy[rng.random(clean.shape) < 0.1] = 1.0
        out = retrain_patch(noisy, dicts.dictionaries[n])
        assert np.all(out >= 0)
        ratios.append(np.sqrt(np.mean((out - clean) ** 2)) / np.sqrt(np.mean((noisy - clean) ** 2)))
    assert max(ratios) < 1.0
    # pilot: mean ratio 0.53 on this corpus
    assert np.mean(ratios) < 0.7


def test_train_dictionaries_counts(training):
    sketches = [p.sketch[:40, :40] for p in training]
    dicts = train_dictionaries(sketches, make_grid(40, 40, 20, 10), 5, max_iters=20)
    assert len(dicts.dictionaries) == 9
    assert dicts[2, 1].location == (2, 1)
    assert dicts[2, 1].W.shape == (400, 5)


def test_train_dictionaries_m100_r20():
    rng = np.random.default_rng(10)
    sketches = list(rng.random((100, 20, 20)))
    dicts = train_dictionaries(sketches, make_grid(20, 20, 20, 10), 20, max_iters=5)
    assert dicts.dictionaries[0].W.shape == (400, 20)
    assert dicts.meta["M"] == 100


def test_identical_sketches_rank1(training):
    sketch = training[0].sketch
    grid = make_grid(60, 60, 20, 10)
    dicts = train_dictionaries([sketch] * 6, grid, 1)
    for n, pt in enumerate(extract_patches(sketch, grid)):
        V = np.stack([pt.data.ravel()] * 6, axis=1)
        assert dicts.meta["final_objective"][n] < 1e-6 * np.linalg.norm(V)


def test_train_dictionaries_errors(training):
    grid = make_grid(60, 60, 20, 10)
    with pytest.raises(ValueError, match="rank exceeds training count"):
        train_dictionaries([p.sketch for p in training[:3]], grid, 4)
    with pytest.raises(ValueError):
        train_dictionaries([np.zeros((40, 40))] * 5, grid, 2)
    with pytest.raises(ValueError):
        train_dictionaries([], grid, 1)


def test_train_dictionaries_thread_invariant(training):
    grid = make_grid(60, 60, 20, 10)
    sketches = [p.sketch for p in training[:8]]
    a = train_dictionaries(sketches, grid, 4, max_iters=30, threads=1)
    b = train_dictionaries(sketches, grid, 4, max_iters=30, threads=4)
    for da, db in zip(a.dictionaries, b.dictionaries):
        np.testing.assert_array_equal(da.W, db.W)


def test_save_load_roundtrip(tmp_path, training):
    grid = make_grid(60, 60, 20, 10)
    dicts = train_dictionaries([p.sketch for p in training[:6]], grid, 3, max_iters=10)
    path = tmp_path / "d.nmfd"
    dicts.save(path)
    data = path.read_bytes()
    assert data[:4] == MAGIC
    header = read_header(data)
    assert (header["rows"], header["cols"], header["r"], header["d"]) == (5, 5, 3, 400)
    assert len(data) == 32 + 25 * 400 * 3 * 8
    back = DictionarySet.load(path)
    assert back.grid == grid
    for a, b in zip(dicts.dictionaries, back.dictionaries):
        assert a.location == b.location
        np.testing.assert_array_equal(a.W, b.W)


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError, match="dictionary file not found"):
        DictionarySet.load(os.fspath(tmp_path / "missing.nmfd"))
    bad = tmp_path / "bad.nmfd"
    bad.write_bytes(b"XXXX" + bytes(28))
    with pytest.raises(ValueError):
        DictionarySet.load(bad)
    bad.write_bytes(b"NMFD")
    with pytest.raises(ValueError):
        DictionarySet.load(bad)


def test_dictionary_set_validation():
    grid = make_grid(20, 20, 20, 10)
    with pytest.raises(ValueError):
        DictionarySet(grid, [LocationDictionary((0, 0), -np.ones((400, 2)))])
    W = np.ones((400, 2))
    W[:, 1] = 0
    with pytest.raises(ValueError):
        DictionarySet(grid, [LocationDictionary((0, 0), W)])
    with pytest.raises(ValueError):
        DictionarySet(grid, [])


def test_retrain_sketch_of_training_sketch(training):
    grid = make_grid(40, 40, 20, 10)
    # M = r keeps every training patch inside the cone; the multiplicative
    # updates approach it slowly, hence the long runs
    sketches = [p.sketch[:40, :40] for p in training[:2]]
    dicts = train_dictionaries(sketches, grid, 2, max_iters=10_000, rel_tol=0)
    out = retrain_sketch(sketches[1], dicts, max_iters=10_000, rel_tol=0)
    assert len(out) == 9
    for pt, ref in zip(out, extract_patches(sketches[1], grid)):
        assert (pt.top, pt.left) == (ref.top, ref.left)
        assert np.sqrt(np.mean((pt.data - ref.data) ** 2)) < 1e-3


def test_retrain_sketch_constant_crude():
    grid = make_grid(40, 40, 20, 10)
    rng = np.random.default_rng(11)
    dicts = []
    for i, j, _, _ in grid.positions():
        W = rng.random((400, 3))
        W[:, 0] = 1.0 + 1e-3 * rng.random(400)  # near-constant atom
        dicts.append(LocationDictionary((i, j), W))
    out = retrain_sketch(np.full((40, 40), 0.6), DictionarySet(grid, dicts))
    # pilot with default iterations: std <= 0.0084, mean error <= 1.2e-4
    for pt in out:
        assert pt.data.std() < 0.015
        assert abs(pt.data.mean() - 0.6) < 1e-3


def test_retrain_sketch_threads_and_errors(training):
    grid = make_grid(60, 60, 20, 10)
    dicts = train_dictionaries([p.sketch for p in training[:5]], grid, 3, max_iters=20)
    crude = training[0].sketch - 0.05  # negatives are clipped
    a = retrain_sketch(crude, dicts, threads=1)
    b = retrain_sketch(crude, dicts, threads=3)
    for pa, pb in zip(a, b):
        np.testing.assert_array_equal(pa.data, pb.data)
        assert np.all(pa.data >= 0)
    with pytest.raises(ValueError):
        retrain_sketch(np.zeros((40, 40)), dicts)
