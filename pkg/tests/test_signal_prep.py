import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from rulkit.cmapss_io import EngineTrajectory, compute_capped_rul, load_bundle
from rulkit.signal_prep import (
    ConditionAwarePreprocessor,
    PreprocessModel,
    UnseenClusterError,
    apply_normalize,
    assign_cluster,
    assign_clusters,
    fit_condition_clusters,
    fit_normalizers,
    fit_preprocess_model,
    select_features,
)
from rulkit.signal_prep.clusters import ConditionClusterModel


def pearson(a, b):
    """Textbook Pearson correlation written out with sums."""
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / (va * vb) ** 0.5


def traj_with(sensor_fn, T, engine_id, rng):
    sensors = rng.normal(0, 1, (T, 21))
    sensors[:, 0] = 518.67  # constant
    rul = np.minimum(np.arange(T - 1, -1, -1), 125).astype(float)
    sensors[:, 1] = sensor_fn(rul, rng)
    return EngineTrajectory(engine_id, np.arange(1, T + 1), rng.normal(0, 1, (T, 3)), sensors)


def test_selection_rules():
    rng = np.random.default_rng(0)
    trajs = [traj_with(lambda r, g: -r + g.normal(0, 1, len(r)), T, i + 1, rng) for i, T in enumerate([150, 180, 210])]
    ruls = [compute_capped_rul(t) for t in trajs]
    sel = select_features(trajs, ruls)
    assert 1 in sel.dropped_low_variance
    assert 2 in sel.selected_sensor_indices
    assert not set(sel.selected_sensor_indices) & set(sel.dropped_low_variance)
    assert sel.selected_sensor_indices == sorted(sel.selected_sensor_indices)
    pooled_s = np.concatenate([t.sensors[:, 1] for t in trajs]).tolist()
    pooled_y = np.concatenate(ruls).tolist()
    assert sel.correlations[2] == pytest.approx(pearson(pooled_s, pooled_y), abs=1e-10)
    for idx in sel.selected_sensor_indices:
        assert abs(sel.correlations[idx]) > 0.1


def test_selection_zero_variance_rul():
    t = EngineTrajectory(1, np.arange(1, 11), np.zeros((10, 3)), np.random.default_rng(0).normal(size=(10, 21)))
    with pytest.raises(ValueError, match="zero variance"):
        select_features([t], [np.full(10, 125.0)])


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=21, max_size=21))
def test_selection_invariant_to_offsets(offsets):
    rng = np.random.default_rng(1)
    trajs = [traj_with(lambda r, g: -r + g.normal(0, 5, len(r)), T, i + 1, rng) for i, T in enumerate([140, 160])]
    ruls = [compute_capped_rul(t) for t in trajs]
    shifted = [
        EngineTrajectory(t.engine_id, t.cycles, t.settings, t.sensors + np.asarray(offsets)) for t in trajs
    ]
    a, b = select_features(trajs, ruls), select_features(shifted, ruls)
    assert a.selected_sensor_indices == b.selected_sensor_indices
    assert a.dropped_low_variance == b.dropped_low_variance


def test_kmeans_single_cluster_is_mean():
    x = np.random.default_rng(2).normal(size=(50, 3))
    m = fit_condition_clusters(x, k=1, seed=0)
    np.testing.assert_allclose(m.centroids[0], x.mean(axis=0), atol=1e-12)


def test_kmeans_two_blobs():
    rng = np.random.default_rng(3)
    c0, c1 = np.array([0.0, 0.0, 0.0]), np.array([10.0, 5.0, -3.0])
    x = np.vstack([c0 + rng.normal(0, 0.1, (100, 3)), c1 + rng.normal(0, 0.1, (80, 3))])
    m = fit_condition_clusters(x, k=2, seed=1)
    oracle = [x[:100].mean(axis=0), x[100:].mean(axis=0)]
    for o in oracle:
        assert np.min(np.linalg.norm(m.centroids - o, axis=1)) < 0.2


def test_kmeans_default_k_and_determinism():
    rng = np.random.default_rng(4)
    centers = rng.uniform(0, 40, (6, 3))
    x = np.vstack([c + rng.normal(0, 0.05, (30, 3)) for c in centers])
    a = fit_condition_clusters(x, seed=7)
    b = fit_condition_clusters(x, seed=7)
    assert a.centroids.shape == (6, 3)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    assert len(np.unique(a.centroids, axis=0)) == 6


def test_kmeans_needs_distinct_rows():
    x = np.repeat(np.eye(3)[:2], 10, axis=0)
    with pytest.raises(ValueError, match="distinct"):
        fit_condition_clusters(x, k=3)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 6), st.integers(0, 1000))
def test_kmeans_inertia_monotone_and_fixpoint(k, seed):
    x = np.random.default_rng(seed).normal(size=(60, 3))
    m = fit_condition_clusters(x, k=k, seed=seed)
    h = np.asarray(m.inertia_history)
    assert np.all(np.diff(h) <= 1e-9 * max(1.0, h[0]))
    labels = assign_clusters(m, x)
    for j in range(k):
        if np.any(labels == j):
            np.testing.assert_allclose(m.centroids[j], x[labels == j].mean(axis=0), atol=1e-9)


def test_assign_cluster_examples():
    cents = np.array([[0.0, 0, 0], [1.0, 0, 0], [5.0, 5, 5], [-1.0, 0, 0]])
    m = ConditionClusterModel(4, cents, 0.0)
    assert assign_cluster(m, cents[2]) == 2
    assert assign_cluster(m, [0.0, 1.0, 0.0]) == 0  # equidistant to 0, 1 and 3 -> lowest index
    m2 = ConditionClusterModel(4, np.array([[9.0, 9, 9], [1.0, 0, 0], [0, 0, 0], [-1.0, 0, 0]]), 0.0)
    assert assign_cluster(m2, [0.0, 0.0, 0.0]) == 2
    m3 = ConditionClusterModel(4, np.array([[9.0, 9, 9], [1.0, 0, 0], [9.0, -9, 9], [-1.0, 0, 0]]), 0.0)
    assert assign_cluster(m3, [0.0, 0.0, 0.0]) == 1  # tie between 1 and 3
    mid = ConditionClusterModel(2, np.array([[0.0, 0, 0], [4.0, 0, 0]]), 0.0)
    assert assign_cluster(mid, [1.9, 0, 0]) == 0


def test_normalizer_examples():
    x = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    n = fit_normalizers(x, np.zeros(3, int))
    assert n.means[0, 0] == pytest.approx(2.0)
    assert n.stds[0, 0] == pytest.approx(np.sqrt(2 / 3))
    assert n.stds[0, 1] == 1e-8
    z = n.transform(x, np.zeros(3, int))
    np.testing.assert_array_equal(z[:, 1], 0.0)
    assert apply_normalize(n, [3.0, 5.0], 0)[0] == pytest.approx(1.2247, abs=1e-3)
    assert apply_normalize(n, [2.0, 5.0], 0)[0] == 0.0
    assert apply_normalize(n, [2.0 + np.sqrt(2 / 3), 5.0], 0)[0] == pytest.approx(1.0)


def test_normalizer_errors():
    x = np.random.default_rng(0).normal(size=(5, 2))
    with pytest.raises(ValueError, match="cluster 1"):
        fit_normalizers(x, np.array([0, 0, 0, 0, 1]))
    n = fit_normalizers(x, np.array([0, 0, 2, 2, 2]))
    with pytest.raises(UnseenClusterError):
        apply_normalize(n, x[0], 1)
    with pytest.raises(UnseenClusterError):
        apply_normalize(n, x[0], 5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_normalize_self_and_invert(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(rng.uniform(-100, 100, 4), rng.uniform(0.1, 20, 4), (90, 4))
    c = rng.integers(0, 3, 90)
    c[:6] = [0, 0, 1, 1, 2, 2]
    n = fit_normalizers(x, c)
    z = n.transform(x, c)
    for j in range(3):
        assert np.allclose(z[c == j].mean(axis=0), 0, atol=1e-9)
        assert np.allclose(z[c == j].std(axis=0), 1, atol=1e-6)
    np.testing.assert_allclose(n.inverse_transform(z, c), x, atol=1e-9)


def test_preprocess_model_json_round_trip(synthetic_dir):
    b = load_bundle("FD001", synthetic_dir)
    m = fit_preprocess_model(b.train, seed=3)
    text = m.to_json()
    again = PreprocessModel.from_json(text)
    assert again.to_json() == text
    assert json.loads(text)["version"] == "v1"
    a, c = m.transform_one(b.test[0]), again.transform_one(b.test[0])
    np.testing.assert_array_equal(a.features, c.features)
    assert fit_preprocess_model(b.train, seed=3).to_json() == text


def test_preprocess_selects_degrading_sensors(synthetic_dir):
    b = load_bundle("FD001", synthetic_dir)
    m = fit_preprocess_model(b.train)
    assert m.selection.selected_sensor_indices == [2, 3, 4, 7, 8, 11, 12, 13, 15, 17, 20, 21]


def test_multiregime_normalization(multiregime_dir):
    b = load_bundle("FD002", multiregime_dir)
    m = fit_preprocess_model(b.train, n_clusters=6)
    assert m.clusters.centroids.shape == (6, 3)
    p = m.transform_one(b.train[0])
    assert p.features.shape == (len(b.train[0]), m.n_features)
    assert np.all(np.isfinite(p.features))
    assert set(np.unique(p.clusters)) <= set(range(6))


def test_transformer_api(synthetic_dir):
    b = load_bundle("FD001", synthetic_dir)
    est = ConditionAwarePreprocessor(random_state=1)
    with pytest.raises(NotFittedError):
        est.transform(b.test)
    assert clone(est).get_params() == est.get_params()
    out = est.fit(b.train).transform(b.test)
    assert len(out) == len(b.test)
    assert est.n_features_out_ == out[0].features.shape[1]
    with pytest.raises(TypeError):
        est.transform([np.zeros((3, 26))])
    again = ConditionAwarePreprocessor.from_model(est.model_)
    np.testing.assert_array_equal(again.transform(b.test[:1])[0].features, out[0].features)


def test_denoise_toggle_changes_features(synthetic_dir):
    b = load_bundle("FD001", synthetic_dir)
    on = fit_preprocess_model(b.train, denoise=True).transform_one(b.train[0]).features
    off = fit_preprocess_model(b.train, denoise=False).transform_one(b.train[0]).features
    assert on.shape == off.shape
    assert not np.allclose(on, off)
