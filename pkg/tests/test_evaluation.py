import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interpomae import evaluation as ev
from interpomae.data import DataError, Series

from oracles import brute_ks, jacobi_eigh, principal_angles


def test_jacobi_oracle_sanity():
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    vals, _ = jacobi_eigh(A)
    np.testing.assert_allclose(vals, [3.0, 1.0], atol=1e-12)


def test_flatten_shapes_and_roundtrip():
    real = [Series(np.arange(3.0).reshape(3, 1)), Series(np.arange(3.0, 6.0).reshape(3, 1))]
    X, labels = ev.flatten_for_projection(real, real[:1])
    assert X.shape == (3, 3) and list(labels) == ["real", "real", "synth"]
    X2, _ = ev.flatten_for_projection(real)
    assert X2.shape == (2, 3)
    back = ev.unflatten(X2, 3, 1)
    np.testing.assert_array_equal(ev.flatten_for_projection(back)[0], X2)
    with pytest.raises(DataError):
        ev.flatten_for_projection(real, [Series(np.zeros((4, 1)))])


def test_pca_rank_one_line():
    t = np.linspace(-3, 5, 20)
    res = ev.pca_project(np.column_stack([t, 2 * t]), 2)
    assert abs(res.explained_variance_ratio[0] - 1.0) < 1e-9
    np.testing.assert_allclose(res.coords.mean(axis=0), 0.0, atol=1e-9)


def test_pca_matches_jacobi_oracle():
    X = np.random.default_rng(42).normal(size=(50, 6)) * np.array([5, 3, 2, 1, 0.5, 0.2])
    res = ev.pca_project(X, 2)
    Xc = X - X.mean(axis=0)
    vals, vecs = jacobi_eigh(Xc.T @ Xc / 49)
    assert principal_angles(res.components.T, vecs[:, :2]).max() < 1e-6
    np.testing.assert_allclose(res.explained_variance_ratio, vals[:2] / vals.sum(), atol=1e-9)


def test_pca_invariants():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 5)) @ rng.normal(size=(5, 5))
    res = ev.pca_project(X, 3)
    np.testing.assert_allclose(res.components @ res.components.T, np.eye(3), atol=1e-9)
    r = res.explained_variance_ratio
    assert np.all(np.diff(r) <= 1e-12) and r.sum() <= 1 + 1e-12
    perm = rng.permutation(40)
    res2 = ev.pca_project(X[perm], 3)
    d1 = np.linalg.norm(res.coords[perm][:, None] - res.coords[perm][None], axis=2)
    d2 = np.linalg.norm(res2.coords[:, None] - res2.coords[None], axis=2)
    np.testing.assert_allclose(d1, d2, atol=1e-8)


def test_pca_errors():
    with pytest.raises(DataError):
        ev.pca_project(np.zeros((3, 2)), 3)
    with pytest.raises(DataError):
        ev.pca_project(np.zeros((1, 4)), 1)


@pytest.fixture(scope="module")
def clusters():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(30, 10))
    b = rng.normal(size=(30, 10))
    b[:, 0] += 50.0
    return np.vstack([a, b])


def test_tsne_shape_and_kl(clusters):
    res = ev.tsne_project(clusters, perplexity=10, iters=500, seed=3)
    assert res.coords.shape == (60, 2)
    kl = res.kl_history
    assert kl[-1] < kl[0]
    tail = np.array(kl[-101:])
    assert np.all(np.diff(tail) <= 1e-6)


def test_tsne_separates_clusters(clusters):
    Y = ev.tsne_project(clusters, perplexity=10, iters=500, seed=3).coords
    ma, mb = Y[:30].mean(axis=0), Y[30:].mean(axis=0)
    side = (Y - (ma + mb) / 2) @ (mb - ma)
    assert np.all(side[:30] < 0) and np.all(side[30:] > 0)


def test_tsne_deterministic(clusters):
    a = ev.tsne_project(clusters[:20], perplexity=5, iters=100, seed=1).coords
    b = ev.tsne_project(clusters[:20], perplexity=5, iters=100, seed=1).coords
    assert a.tobytes() == b.tobytes()


def test_tsne_too_few():
    with pytest.raises(DataError, match="too few points for t-SNE"):
        ev.tsne_project(np.zeros((3, 2)))


def test_perplexity_calibration():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 3))
    P = ev.conditional_p(ev._sq_distances(X), 8.0)
    row = P[0][P[0] > 0]
    assert abs(-np.sum(row * np.log(row)) - np.log(8.0)) < 1e-4
    np.testing.assert_allclose(P.sum(axis=1), 1.0)


def test_ks_matches_brute_force():
    rng = np.random.default_rng(3)
    for n, m in [(20, 30), (7, 7), (50, 13)]:
        a = rng.normal(size=n)
        b = rng.normal(0.3, 1.2, size=m)
        assert abs(ev.ks_statistic(a, b) - brute_ks(a, b)) < 1e-12
    ties = np.array([0.0, 1.0, 1.0, 2.0])
    assert abs(ev.ks_statistic(ties, np.array([1.0, 1.0, 3.0])) - brute_ks(ties, np.array([1.0, 1.0, 3.0]))) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=15), st.lists(st.integers(-5, 5), min_size=1, max_size=15))
def test_ks_range_and_zero_iff_equal(a, b):
    a, b = np.array(a, float), np.array(b, float)
    k = ev.ks_statistic(a, b)
    assert 0 <= k <= 1
    assert abs(k - brute_ks(a, b)) < 1e-12
    assert ev.ks_statistic(a, a) == 0.0


def _series(n, seed, shift=0.0):
    rng = np.random.default_rng(seed)
    return [Series(rng.normal(size=(4, 3)) + shift, str(i)) for i in range(n)]


def test_marginal_report_identity_and_shift():
    real = _series(5, 0)
    rows = ev.marginal_report(real, real)
    assert all(r["ks"] == 0 and r["mean_delta"] == 0 and r["std_delta"] == 0 for r in rows)
    shifted = [Series(s.values + 10, s.id) for s in real]
    rows = ev.marginal_report(real, shifted)
    assert all(abs(r["mean_delta"] - 10) < 1e-12 for r in rows)
    with pytest.raises(DataError):
        ev.marginal_report([], real)


def brute_diversity(group):
    d, n = 0.0, 0
    for i in range(len(group)):
        for j in range(i + 1, len(group)):
            d += np.sqrt(np.sum((group[i].values - group[j].values) ** 2))
            n += 1
    return d / n


def test_diversity_report():
    same = [Series(np.ones((4, 3)))] * 3
    assert ev.diversity_report({"a": same})[0]["a"] == 0.0
    pair = [Series(np.zeros((4, 3))), Series(np.ones((4, 3)))]
    assert abs(ev.diversity_report({"p": pair})[0]["p"] - np.sqrt(12)) < 1e-12
    groups = {"x": _series(5, 1), "y": _series(3, 2)}
    per, grand = ev.diversity_report(groups)
    for k, g in groups.items():
        assert abs(per[k] - brute_diversity(g)) < 1e-12
    assert abs(grand - (per["x"] + per["y"]) / 2) < 1e-12
    moved = {k: [Series(s.values + 7.5, s.id) for s in g] for k, g in groups.items()}
    per2, _ = ev.diversity_report(moved)
    assert all(abs(per[k] - per2[k]) < 1e-12 for k in per)
    with pytest.raises(DataError):
        ev.diversity_report({"solo": _series(1, 0)})


def test_projection_csv(tmp_path):
    res = ev.ProjectionResult(np.array([[0.5, 1.0], [2.0, -1.0]]), np.array(["real", "synth"]), "pca")
    ev.write_projection(res, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text() == "x,y,label\n0.5,1.0,real\n2.0,-1.0,synth\n"
