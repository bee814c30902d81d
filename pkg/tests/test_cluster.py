import os

import numpy as np
import pytest
from scipy.spatial.distance import cdist, pdist

from learning.cluster import (
    fit_pca,
    kmeans,
    load_filter_bank,
    save_filter_bank,
    select_filters,
)
from quantum.ansatz import CandidatePool, bind_params, build_pool, make_template, output_distribution
from utils.errors import IntegrityError, MissingPrerequisiteError


def _spanning_seed(blocks, K):
    """First seed whose initial row sample touches every block."""
    for seed in range(1000):
        rows = np.random.default_rng(seed).choice(len(blocks), size=K, replace=False)
        if len({blocks[r] for r in rows}) == K:
            return seed
    raise AssertionError("no spanning seed found")


def test_two_points_two_clusters():
    result = kmeans([[0.0, 0.0], [1.0, 1.0]], 2, seed=0)
    assert result.objective == 0.0
    assert sorted(map(tuple, result.centroids)) == [(0.0, 0.0), (1.0, 1.0)]


def test_two_blobs():
    X = np.array([[0, 0], [0, 1], [10, 0], [10, 1]], dtype=float)
    seed = _spanning_seed([0, 0, 1, 1], 2)
    result = kmeans(X, 2, seed=seed)
    assert result.objective == pytest.approx(1.0)
    assert sorted(map(tuple, result.centroids)) == [(0.0, 0.5), (10.0, 0.5)]
    assert result.assignments[0] == result.assignments[1] != result.assignments[2]


def test_single_cluster_is_column_mean(rng):
    X = rng.normal(size=(30, 5))
    result = kmeans(X, 1, seed=3)
    np.testing.assert_allclose(result.centroids[0], X.mean(axis=0), atol=1e-12)
    assert result.objective == pytest.approx(np.sum((X - X.mean(axis=0)) ** 2))


@pytest.mark.parametrize("K", [0, 5])
def test_k_out_of_range_rejected(K):
    with pytest.raises(ValueError):
        kmeans(np.zeros((4, 2)), K, seed=0)


def test_non_finite_input_rejected():
    with pytest.raises(ValueError):
        kmeans([[0.0, np.nan], [1.0, 1.0]], 1, seed=0)


def test_lloyd_invariants_on_random_problems(rng):
    for trial in range(100):
        m = int(rng.integers(5, 60))
        K = int(rng.integers(1, min(m, 8) + 1))
        X = rng.normal(size=(m, int(rng.integers(1, 6))))
        result = kmeans(X, K, seed=trial)

        history = np.array(result.objective_history)
        assert np.all(np.diff(history) <= 1e-12 * max(1.0, history[0]))

        for k in range(K):
            members = result.assignments == k
            if np.any(members):
                np.testing.assert_allclose(result.centroids[k], X[members].mean(axis=0), atol=1e-12)

        if result.n_iterations < 300:
            d = cdist(X, result.centroids, "sqeuclidean")
            own = d[np.arange(m), result.assignments]
            assert np.all(own <= d.min(axis=1) + 1e-6)


def test_kmeans_is_deterministic(rng):
    X = rng.normal(size=(40, 3))
    a = kmeans(X, 4, seed=9)
    b = kmeans(X, 4, seed=9)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    np.testing.assert_array_equal(a.assignments, b.assignments)


def test_pca_of_identical_rows_is_zero():
    model = fit_pca(np.ones((5, 3)), 1)
    np.testing.assert_allclose(model.transform(np.ones((5, 3))), 0.0, atol=1e-12)


def test_pca_on_a_line():
    X = np.array([[1.0, 0.0], [-1.0, 0.0]])
    model = fit_pca(X, 1)
    np.testing.assert_allclose(np.abs(model.components[0]), [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(sorted(model.transform(X)[:, 0]), [-1.0, 1.0], atol=1e-12)


def test_full_rank_pca_is_an_orthogonal_change_of_basis(rng):
    X = rng.normal(size=(50, 16))
    model = fit_pca(X, 16)
    projected = model.transform(X)
    np.testing.assert_allclose(model.components @ model.components.T, np.eye(16), atol=1e-10)
    np.testing.assert_allclose(projected @ model.components + model.mean, X, atol=1e-9)
    np.testing.assert_allclose(pdist(projected), pdist(X), atol=1e-9)
    assert np.all(np.diff(model.explained_variance) <= 1e-12)
    expected = np.sort(np.linalg.eigvalsh(np.cov(X, rowvar=False)))[::-1]
    np.testing.assert_allclose(model.explained_variance, expected, rtol=1e-8, atol=1e-12)


def test_pca_components_sign_convention(rng):
    model = fit_pca(rng.normal(size=(20, 6)), 4)
    for row in model.components:
        assert row[np.argmax(np.abs(row))] > 0


@pytest.mark.parametrize("r", [0, 7])
def test_pca_rank_out_of_range(rng, r):
    with pytest.raises(ValueError):
        fit_pca(rng.normal(size=(5, 6)), r)


def _pool_from(circuits, seed=0):
    return CandidatePool(tuple(circuits), np.vstack([output_distribution(c) for c in circuits]), seed)


def test_whole_pool_selected_when_k_equals_pool_size():
    pool = build_pool(3, 6, (1, 1), 5)
    bank = select_filters(pool, 6, None, seed=1)
    assert sorted(bank.selection_indices) == list(range(6))


def test_selection_stays_distinct_for_identical_embeddings():
    template = make_template("ry_only", 2, 1)
    circuits = [bind_params(template, [0.0, 0.0], bind_seed=i) for i in range(5)]
    bank = select_filters(_pool_from(circuits), 3, None, seed=0)
    assert len(set(bank.selection_indices)) == 3


def test_two_families_yield_one_filter_each():
    ground = make_template("ry_only", 2, 1)
    spread = make_template("h_cry_chain", 2, 1)
    circuits = [bind_params(ground, [0.0, 0.0], i) for i in range(3)]
    circuits += [bind_params(spread, [0.0], i) for i in range(3)]
    bank = select_filters(_pool_from(circuits), 2, None, seed=4)
    families = sorted(i // 3 for i in bank.selection_indices)
    assert families == [0, 1]


def test_selected_rows_are_nearest_unclaimed(rng):
    pool = build_pool(3, 30, (1, 2), 11)
    bank = select_filters(pool, 5, None, seed=2)
    centroids = kmeans(pool.embeddings, 5, seed=2).centroids
    d = cdist(centroids, pool.embeddings)
    claimed = set()
    for k, chosen in enumerate(bank.selection_indices):
        unclaimed = [i for i in range(len(pool)) if i not in claimed]
        assert d[k, chosen] <= d[k, unclaimed].min()
        claimed.add(chosen)


def test_selection_with_pca_reduction():
    pool = build_pool(4, 30, (1, 2), 8)
    bank = select_filters(pool, 4, 3, seed=1)
    assert len(bank) == 4
    assert bank.provenance.pca_dims == 3
    assert bank.n_qubits == 4


def test_k_larger_than_pool_rejected():
    with pytest.raises(ValueError):
        select_filters(build_pool(2, 3, (1, 1), 0), 4, None, seed=0)


def _coverage(embeddings, rows):
    """Sum over pool rows of the squared distance to the nearest chosen row."""
    return float(np.sum(cdist(embeddings, embeddings[list(rows)], "sqeuclidean").min(axis=1)))


def test_selection_covers_the_pool_better_than_random_subsets():
    wins = 0
    for trial in range(100):
        pool = build_pool(4, 100, (1, 3), trial)
        bank = select_filters(pool, 4, None, seed=trial)
        subset = np.random.default_rng(10_000 + trial).choice(len(pool), size=4, replace=False)
        if _coverage(pool.embeddings, bank.selection_indices) <= _coverage(pool.embeddings, subset):
            wins += 1
    assert wins >= 95


def test_bank_files_round_trip(tmp_path):
    bank = select_filters(build_pool(4, 12, (1, 2), 3), 3, None, seed=0)
    save_filter_bank(str(tmp_path), bank)
    loaded = load_filter_bank(str(tmp_path))
    assert loaded.filters == bank.filters
    assert loaded.selection_indices == bank.selection_indices
    assert loaded.provenance == bank.provenance


def test_corrupted_filter_file_named_in_error(tmp_path):
    bank = select_filters(build_pool(4, 12, (1, 2), 3), 3, None, seed=0)
    save_filter_bank(str(tmp_path), bank)
    target = os.path.join(str(tmp_path), "filter_01.yaml")
    with open(target, "a", encoding="utf-8") as f:
        f.write("# edited\n")
    with pytest.raises(IntegrityError, match="filter_01.yaml"):
        load_filter_bank(str(tmp_path))


def test_missing_bank_reported(tmp_path):
    with pytest.raises(MissingPrerequisiteError):
        load_filter_bank(str(tmp_path / "nothing"))
