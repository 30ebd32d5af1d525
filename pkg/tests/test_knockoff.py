import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from knockselect.data import TaskKind, make_dataset
from knockselect.knockoff import (
    GaussianModel, KnockoffResult, ThresholdMode, assign_pseudo_labels, estimate_gaussian,
    generate, sample_knockoffs, score_features, dump_knockoffs,
)
from knockselect.seeding import stream
from oracles import pearson


def gaussian_data(n, cov, seed):
    rng = np.random.default_rng(seed)
    return rng.multivariate_normal(np.zeros(cov.shape[0]), cov, size=n)


def test_independent_columns_give_unit_s():
    ds = make_dataset(np.random.default_rng(0).normal(size=(20000, 3)))
    m = estimate_gaussian(ds, ridge=1e-6)
    assert np.allclose(m.covariance, np.eye(3), atol=0.03)
    assert np.allclose(m.s, 1.0)


def test_equicorrelated_pair():
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    ds = make_dataset(gaussian_data(50000, cov, 1))
    m = estimate_gaussian(ds, ridge=0.0)
    lam = np.linalg.eigvalsh(m.covariance).min()
    assert abs(lam - 0.5) < 0.02
    assert np.allclose(m.s, min(2 * lam, 1.0))
    assert np.linalg.eigvalsh(2 * m.covariance - np.diag(m.s)).min() >= -1e-8


def test_constant_column_handled_by_ridge():
    x = np.random.default_rng(2).normal(size=(200, 3))
    x[:, 1] = 4.0
    ds = make_dataset(x)
    m = estimate_gaussian(ds, ridge=1e-4)
    assert np.linalg.eigvalsh(m.covariance).min() > 0
    # the ridged constant column has variance ridge, so lambda_min <= ridge
    assert abs(m.s[1] - 2e-4) < 1e-6
    kr = sample_knockoffs(ds, m, seed=0)
    assert np.all(np.isfinite(kr.knockoffs))


def test_no_ridge_on_singular_data_raises():
    x = np.random.default_rng(3).normal(size=(50, 2))
    x = np.column_stack([x, x[:, 0] + x[:, 1]])
    ds = make_dataset(x)
    with pytest.raises(np.linalg.LinAlgError):
        estimate_gaussian(ds, ridge=0.0)


def test_identity_model_gives_fresh_noise():
    ds = make_dataset(np.random.default_rng(4).normal(size=(5, 3)))
    m = GaussianModel(mean=np.zeros(3), covariance=np.eye(3), s=np.ones(3), ridge=0.0)
    kr = sample_knockoffs(ds, m, seed=9)
    z = stream(9, "knockoff").standard_normal((5, 3))
    assert np.allclose(kr.knockoffs, z, atol=1e-12)


def test_knockoffs_deterministic_and_shape():
    ds = make_dataset(np.random.default_rng(5).normal(size=(40, 4)))
    m = estimate_gaussian(ds)
    a = sample_knockoffs(ds, m, 3).knockoffs
    b = sample_knockoffs(ds, m, 3).knockoffs
    assert a.shape == ds.features.shape and np.array_equal(a, b)


def test_knockoffs_match_moments_and_cross_correlation():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(5, 5))
    cov = a @ a.T + 0.5 * np.eye(5)
    d = np.sqrt(np.diag(cov))
    cov = cov / np.outer(d, d)
    n = 1000
    ds = make_dataset(gaussian_data(n, cov, 7))
    model = estimate_gaussian(ds)
    x = ds.features
    c_orig = np.corrcoef(x, rowvar=False)
    for seed in range(30):
        xk = sample_knockoffs(ds, model, seed).knockoffs
        assert np.all(np.abs(xk.mean(axis=0) - x.mean(axis=0)) < 4 / np.sqrt(n))
        assert np.all(np.abs(xk.std(axis=0) - x.std(axis=0)) < 4 / np.sqrt(n))
        cross = np.corrcoef(x, xk, rowvar=False)[:5, 5:]
        off = ~np.eye(5, dtype=bool)
        assert np.max(np.abs(cross[off] - c_orig[off])) < 5 / np.sqrt(n)


def test_distributional_match_z_statistics():
    rng = np.random.default_rng(8)
    cov = np.full((6, 6), 0.3) + 0.7 * np.eye(6)
    n = 800
    ds = make_dataset(gaussian_data(n, cov, 9))
    model = estimate_gaussian(ds)
    x = ds.features
    ok = total = 0
    for seed in range(30):
        xk = sample_knockoffs(ds, model, seed).knockoffs
        zm = (xk.mean(0) - x.mean(0)) / np.sqrt(x.var(0) / n + xk.var(0) / n)
        zv = (xk.var(0) - x.var(0)) / np.sqrt(2 * x.var(0) ** 2 / n + 2 * xk.var(0) ** 2 / n)
        ok += int(np.sum((np.abs(zm) <= 4) & (np.abs(zv) <= 4)))
        total += 6
    assert ok / total >= 0.95


def test_score_exact_copy_and_orthogonal():
    f = np.array([1.0, -1.0, 2.0, -2.0])
    ds = make_dataset(np.column_stack([f, f[::-1] * 0.5 + 0.1]))
    kr = score_features(ds, KnockoffResult(knockoffs=np.column_stack([ds.features[:, 0]] * 2)))
    assert kr.scores[0] == pytest.approx(1.0) and kr.distances[0] == pytest.approx(0.0)

    a = np.array([1.0, -1.0, 1.0, -1.0])
    b = np.array([1.0, 1.0, -1.0, -1.0])
    ds2 = make_dataset(np.column_stack([a, b]))
    kr2 = score_features(ds2, KnockoffResult(knockoffs=np.column_stack([b, b * 2])))
    assert kr2.scores[0] == pytest.approx(0.0, abs=1e-15) and kr2.distances[0] == pytest.approx(1.0)


def test_score_is_mean_abs_pearson_oracle():
    # build knockoff columns with |rho| = 0.2 and 0.6 against f_1
    rng = np.random.default_rng(10)
    n = 50
    f1 = rng.normal(size=n)
    f1 = (f1 - f1.mean()) / f1.std()
    e1 = rng.normal(size=n)
    e1 -= e1.mean()
    e1 -= (e1 @ f1) / (f1 @ f1) * f1
    e1 /= e1.std()
    k1 = 0.2 * f1 + np.sqrt(1 - 0.04) * e1
    k2 = -0.6 * f1 + np.sqrt(1 - 0.36) * e1
    ds = make_dataset(np.column_stack([f1, rng.normal(size=n)]))
    kr = score_features(ds, KnockoffResult(knockoffs=np.column_stack([k1, k2])))
    assert abs(pearson(f1, k1) - 0.2) < 1e-12 and abs(pearson(f1, k2) + 0.6) < 1e-12
    assert kr.scores[0] == pytest.approx(0.4, abs=1e-12)
    oracle = np.mean([abs(pearson(ds.features[:, 1], k)) for k in (k1, k2)])
    assert kr.scores[1] == pytest.approx(oracle, abs=1e-12)


def test_zero_variance_knockoff_column_scores_zero():
    ds = make_dataset(np.random.default_rng(0).normal(size=(10, 2)))
    kr = score_features(ds, KnockoffResult(knockoffs=np.zeros((10, 2))))
    assert np.array_equal(kr.scores, [0.0, 0.0])


def test_own_column_distance_mode():
    ds = make_dataset(np.random.default_rng(1).normal(size=(30, 3)))
    same = score_features(ds, KnockoffResult(knockoffs=ds.features.copy()), "own-column")
    assert np.allclose(same.distances, 0.0)
    flipped = score_features(ds, KnockoffResult(knockoffs=-ds.features), "own-column")
    assert np.allclose(flipped.distances, 1.0)


def test_mean_threshold_example():
    kr = assign_pseudo_labels(KnockoffResult(knockoffs=np.zeros((1, 4)), distances=np.array([0.1, 0.1, 0.1, 0.9])))
    assert kr.threshold == pytest.approx(0.3)
    assert list(kr.labels) == [0, 0, 0, 1]


def test_equal_distances_all_positive():
    for v in (0.1, 0.3, 0.7):
        kr = assign_pseudo_labels(KnockoffResult(knockoffs=np.zeros((1, 7)), distances=np.full(7, v)))
        assert list(kr.labels) == [1] * 7


def test_median_confuses_near_identical_features_mean_does_not():
    # most features sit at nearly the same distance; three stand far away
    dist = np.array([0.60, 0.602, 0.598, 0.601, 0.599, 0.603, 0.597, 0.600, 0.90, 0.92, 0.88])
    kr = KnockoffResult(knockoffs=np.zeros((1, dist.size)), distances=dist)
    med = assign_pseudo_labels(kr, ThresholdMode.MEDIAN)
    mean = assign_pseudo_labels(kr, ThresholdMode.MEAN)
    bulk = slice(0, 8)
    # median splits the near-identical bulk into both labels
    assert 0 < med.labels[bulk].sum() < 8
    # mean labels exactly the outliers positive
    assert list(mean.labels) == [0] * 8 + [1] * 3


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=12), st.randoms())
def test_labels_follow_permutation(dist, rnd):
    dist = np.array(dist)
    perm = np.arange(dist.size)
    rnd.shuffle(perm)
    a = assign_pseudo_labels(KnockoffResult(knockoffs=np.zeros((1, dist.size)), distances=dist))
    b = assign_pseudo_labels(KnockoffResult(knockoffs=np.zeros((1, dist.size)), distances=dist[perm]))
    assert np.array_equal(a.labels[perm], b.labels)
    assert np.array_equal(a.labels, (dist >= a.threshold - 1e-12 * max(1, a.threshold)).astype(int))


def test_target_blind():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(60, 5))
    with_y = make_dataset(x, target=rng.integers(0, 2, 60), task=TaskKind.CLASSIFICATION)
    other_y = make_dataset(x, target=rng.integers(0, 2, 60), task=TaskKind.CLASSIFICATION)
    no_y = with_y.without_target()
    runs = [generate(ds, seed=4) for ds in (with_y, other_y, no_y)]
    for r in runs[1:]:
        assert np.array_equal(r.knockoffs, runs[0].knockoffs)
        assert np.array_equal(r.labels, runs[0].labels)
        assert np.array_equal(r.scores, runs[0].scores)


def test_invariants_of_full_pipeline(correlated_dataset):
    kr = generate(correlated_dataset, seed=1)
    assert np.all((kr.scores >= 0) & (kr.scores <= 1))
    assert np.allclose(kr.distances, 1 - kr.scores)
    assert kr.knockoffs.shape == correlated_dataset.features.shape
    # the independent columns are the far-from-knockoff ones
    assert list(kr.labels[4:]) == [1, 1]


def test_dump(tmp_path, correlated_dataset):
    kr = generate(correlated_dataset, seed=1)
    dump_knockoffs(kr, correlated_dataset.feature_names, tmp_path)
    head = (tmp_path / "knockoffs.csv").read_text().splitlines()[0]
    assert head == "f~1,f~2,f~3,f~4,f~5,f~6"
    lab = (tmp_path / "labels.csv").read_text().splitlines()
    assert lab[0] == "feature_name,score,distance,label" and len(lab) == 7
