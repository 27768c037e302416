import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfnet.geo import (
    SpatialFeatures, build_graph, calibrate_omega, edge_weight, graph_from_edges,
    great_circle_distance, pairwise_distances, spatial_feature_matrix, weight_matrix,
)

lat_st = st.floats(-90, 90, allow_nan=False)
lon_st = st.floats(-180, 180, allow_nan=False)


def _mp_haversine(a, b):
    mpmath.mp.dps = 40
    lat1, lon1, lat2, lon2 = (mpmath.radians(mpmath.mpf(v)) for v in (*a, *b))
    h = mpmath.sin((lat2 - lat1) / 2) ** 2 + \
        mpmath.cos(lat1) * mpmath.cos(lat2) * mpmath.sin((lon2 - lon1) / 2) ** 2
    return 2 * 6371 * mpmath.asin(mpmath.sqrt(h))


def _random_features(n, seed):
    rng = np.random.default_rng(seed)
    return [SpatialFeatures(f"L{i}", float(rng.lognormal(10, 1)), float(rng.integers(0, 5)),
                            float(rng.integers(0, 40)), float(rng.uniform(-90, -85)),
                            float(rng.uniform(38, 41))) for i in range(n)]


class TestDistance:
    def test_identical_points(self):
        assert great_circle_distance((12.5, -40.0), (12.5, -40.0)) == 0.0

    @given(lat_st, lon_st, lat_st, lon_st)
    def test_symmetry_and_nonnegativity(self, a1, o1, a2, o2):
        d1 = great_circle_distance((a1, o1), (a2, o2))
        d2 = great_circle_distance((a2, o2), (a1, o1))
        assert d1 >= 0
        assert d1 == pytest.approx(d2, abs=1e-9)

    def test_one_degree_of_longitude_on_equator(self):
        expected = float(_mp_haversine((0, 0), (0, 1)))  # 111.19492664455...
        assert great_circle_distance((0, 0), (0, 1)) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(111.19, abs=0.01)

    def test_matches_high_precision_on_random_pairs(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a = (rng.uniform(-80, 80), rng.uniform(-180, 180))
            b = (rng.uniform(-80, 80), rng.uniform(-180, 180))
            assert great_circle_distance(a, b) == pytest.approx(float(_mp_haversine(a, b)), rel=1e-9)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            great_circle_distance((91, 0), (0, 0))
        with pytest.raises(ValueError):
            great_circle_distance((0, 0), (0, -181))

    def test_pairwise_matches_scalar(self):
        lat, lon = [10.0, 20.0, -5.0], [30.0, 31.0, 100.0]
        d = pairwise_distances(lat, lon)
        for i in range(3):
            for j in range(3):
                assert d[i, j] == pytest.approx(
                    great_circle_distance((lat[i], lon[i]), (lat[j], lon[j])), abs=1e-9)


class TestEdgeWeight:
    def test_unit_populations_zero_distance(self):
        assert edge_weight(1, 1, 0, 0.8, 1.7, 5) == 1.0

    def test_decays_monotonically_to_zero(self):
        ds = np.linspace(0, 3000, 200)
        w = edge_weight(1e5, 2e5, ds, 0.35, 0.37, 30)
        assert np.all(np.diff(w) < 0) or np.all(np.diff(w[w > 0]) < 0)
        assert w[-1] < 1e-30

    def test_monotone_in_population(self):
        assert edge_weight(2e4, 1e4, 10, 0.35, 0.37, 30) > edge_weight(1e4, 1e4, 10, 0.35, 0.37, 30)
        assert edge_weight(1e4, 2e4, 10, 0.35, 0.37, 30) > edge_weight(1e4, 1e4, 10, 0.35, 0.37, 30)

    def test_appendix_hyperparameters_against_high_precision(self):
        mpmath.mp.dps = 40
        p = mpmath.mpf(10) ** 5
        expected = p ** mpmath.mpf("0.35") * p ** mpmath.mpf("0.37") * mpmath.exp(-1)
        got = edge_weight(1e5, 1e5, 30, 0.35, 0.37, 30)
        assert got == pytest.approx(float(expected), rel=1e-13)  # ~1473.3

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            edge_weight(0, 1, 1, 0.3, 0.3, 30)
        with pytest.raises(ValueError):
            edge_weight(1, 1, 1, 0.3, 0.3, 0)

    @settings(max_examples=40)
    @given(st.floats(0.1, 100), st.floats(0, 500), st.floats(1, 100))
    def test_joint_distance_gamma_scaling_is_invariant(self, lam, d, gamma):
        a = edge_weight(3e4, 7e3, d, 0.35, 0.37, gamma)
        b = edge_weight(3e4, 7e3, d * lam, 0.35, 0.37, gamma * lam)
        assert a == pytest.approx(b, rel=1e-12)


def _brute_force_adjacency(features, alpha, beta, gamma, omega):
    n = len(features)
    adj = np.zeros((n, n), dtype=int)
    for i in range(n):
        for j in range(n):
            if i == j:
                adj[i, j] = 1
                continue
            d = great_circle_distance((features[i].latitude, features[i].longitude),
                                      (features[j].latitude, features[j].longitude))
            wij = features[i].population ** alpha * features[j].population ** beta * math.exp(-d / gamma)
            wji = features[j].population ** alpha * features[i].population ** beta * math.exp(-d / gamma)
            adj[i, j] = int(max(wij, wji) >= omega)
    return adj


class TestBuildGraph:
    def test_fifty_node_instance_matches_brute_force(self):
        feats = _random_features(50, seed=9)
        g = build_graph(feats)
        brute = _brute_force_adjacency(feats, 0.35, 0.37, 30.0, g.omega)
        np.testing.assert_array_equal(g.adjacency, brute)
        assert g.edge_count == int(np.triu(brute, 1).sum()) + 50

    def test_edge_at_exact_threshold_is_present(self):
        feats = [SpatialFeatures("a", 1e4, 1, 1, -88.0, 40.0), SpatialFeatures("b", 1e4, 1, 1, -88.1, 40.0)]
        w = weight_matrix(feats, 0.35, 0.35, 30.0)
        g = build_graph(feats, 0.35, 0.35, 30.0, omega=float(w[0, 1]))
        assert g.adjacency[0, 1] == 1
        g2 = build_graph(feats, 0.35, 0.35, 30.0, omega=float(np.nextafter(w[0, 1], np.inf)))
        assert g2.adjacency[0, 1] == 0

    def test_threshold_above_all_weights_leaves_self_loops(self):
        feats = _random_features(12, seed=2)
        g = build_graph(feats, omega=1e30)
        np.testing.assert_array_equal(g.adjacency, np.eye(12, dtype=int))
        assert g.edge_count == 12
        assert all(nb == [i] for i, nb in enumerate(g.neighbors))

    def test_symmetry_with_unequal_exponents(self):
        g = build_graph(_random_features(30, seed=4))
        assert np.array_equal(g.adjacency, g.adjacency.T)
        assert not np.allclose(g.weights, g.weights.T)

    def test_neighbor_lists_consistent_with_adjacency(self):
        g = build_graph(_random_features(25, seed=8))
        for i, nb in enumerate(g.neighbors):
            assert i in nb
            assert sorted(nb) == list(np.flatnonzero(g.adjacency[i]))

    def test_default_threshold_targets_edges_per_node(self):
        g = build_graph(_random_features(200, seed=1))
        assert g.edges_per_node == pytest.approx(2.67, abs=0.05)
        w = np.maximum(g.weights, g.weights.T)
        assert calibrate_omega(g.weights, 2.67) == g.omega
        assert (np.triu(w, 1) >= g.omega).sum() == round(2.67 * 200)

    def test_duplicate_ids(self):
        f = _random_features(3, seed=0)
        f[2] = SpatialFeatures("L0", 10.0, 0, 0, 0.0, 0.0)
        with pytest.raises(ValueError, match="duplicate"):
            build_graph(f)

    def test_nonpositive_omega(self):
        with pytest.raises(ValueError):
            build_graph(_random_features(3, seed=0), omega=0.0)

    def test_edge_list_override(self):
        feats = _random_features(4, seed=3)
        g = graph_from_edges(feats, [("L0", "L1"), ("L1", "L0"), ("L2", "L3")])
        assert g.edge_count == 2 + 4
        assert g.adjacency[1, 0] == 1 and g.adjacency[0, 2] == 0

    def test_distance_and_gamma_scaling_leaves_graph_unchanged(self):
        feats = _random_features(40, seed=6)
        pop = np.array([f.population for f in feats])
        d = pairwise_distances([f.latitude for f in feats], [f.longitude for f in feats])
        w1 = edge_weight(pop[:, None], pop[None, :], d, 0.35, 0.37, 30.0)
        w2 = edge_weight(pop[:, None], pop[None, :], 2.5 * d, 0.35, 0.37, 75.0)
        np.testing.assert_allclose(w1, w2, rtol=1e-12)
        omega = calibrate_omega(w1)
        np.testing.assert_array_equal(np.maximum(w1, w1.T) >= omega, np.maximum(w2, w2.T) >= omega * (1 - 1e-12))


class TestSpatialFeatures:
    def test_validation(self):
        with pytest.raises(ValueError):
            SpatialFeatures("x", 0.0, 1, 1, 0, 0)
        with pytest.raises(ValueError):
            SpatialFeatures("x", 1.0, 1, 1, 0, 95)

    def test_matrix_standardized(self):
        s = spatial_feature_matrix(_random_features(30, seed=1))
        assert s.shape == (30, 5)
        np.testing.assert_allclose(s.mean(axis=0), 0, atol=1e-12)

    def test_partial_income_requires_imputation(self):
        feats = _random_features(3, seed=1)
        feats = [SpatialFeatures(f.location_id, f.population, f.hospitals, f.icu_beds,
                                 f.longitude, f.latitude, 5e4 if i else None) for i, f in enumerate(feats)]
        with pytest.raises(ValueError, match="income"):
            spatial_feature_matrix(feats)
        assert spatial_feature_matrix(feats, impute=True).shape == (3, 6)
