import csv
import warnings

import numpy as np
import pytest

from lfnet.data import (
    fill_updates, fit_normalizer, generate_synthetic, load_dataset, load_dataset_dir,
    normalize, split_dataset, write_dataset,
)
from lfnet.data.synthetic import SyntheticConfig, release_latency


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


@pytest.fixture
def toy_files(tmp_path):
    loc = _write(tmp_path / "locations.csv",
                 ["location_id", "latitude", "longitude", "population", "hospitals", "icu_beds", "income"],
                 [["a", 40.0, -88.0, 1000, 1, 2, ""], ["b", 40.1, -88.1, 2000, 0, 1, ""]])
    rt_rows = [[lid, w, f, 10 * w + (1 if lid == "b" else 0) + (0.5 if f == "g" else 0)]
               for lid in "ab" for w in range(14) for f in "fg"]
    rt = _write(tmp_path / "realtime.csv", ["location_id", "week", "feature", "value"], rt_rows)
    return tmp_path, loc, rt


def _updates(path, rows):
    return _write(path / "updates.csv", ["location_id", "target_week", "received_week", "feature", "value"], rows)


class TestLoad:
    def test_same_week_and_delayed_revisions(self, toy_files):
        d, loc, rt = toy_files
        up = _updates(d, [["a", 2, 2, "f", 99.0], ["a", 5, 8, "f", 55.0]])
        ds = load_dataset(loc, rt, up)
        assert ds.latency[0, 2] == 0 and ds.U[0, 2, 0] == 99.0
        assert ds.latency[0, 5] == 3 and ds.U[0, 5, 0] == 55.0
        assert ds.updates.revised[0, 5, 0] and not ds.updates.revised[0, 5, 1]
        # unrevised entries carry the real-time value
        assert ds.U[0, 5, 1] == ds.X[0, 5, 1]
        assert ds.latency[1].max() == 0

    def test_thirteen_week_latency(self, toy_files):
        d, loc, rt = toy_files
        rows = [["b", w, min(13, w + 13), "g", 1.0] for w in range(1)] + [["a", 0, 13, "f", 3.0]]
        ds = load_dataset(loc, rt, _updates(d, rows))
        assert ds.latency.max() == 13

    def test_latest_received_wins(self, toy_files):
        d, loc, rt = toy_files
        up = _updates(d, [["a", 1, 4, "f", 40.0], ["a", 1, 6, "f", 60.0], ["a", 1, 3, "f", 30.0]])
        ds = load_dataset(loc, rt, up)
        assert ds.U[0, 1, 0] == 60.0 and ds.latency[0, 1] == 5

    def test_revision_from_the_past_is_rejected(self, toy_files):
        d, loc, rt = toy_files
        with pytest.raises(ValueError, match="future week"):
            load_dataset(loc, rt, _updates(d, [["a", 5, 4, "f", 1.0]]))

    def test_unknown_location(self, toy_files):
        d, loc, rt = toy_files
        with pytest.raises(KeyError):
            load_dataset(loc, rt, _updates(d, [["zz", 1, 1, "f", 1.0]]))

    def test_empty_updates_give_identity_stream(self, toy_files):
        d, loc, rt = toy_files
        ds = load_dataset(loc, rt, _updates(d, []))
        np.testing.assert_array_equal(ds.U, ds.X)
        assert np.all(ds.latency == 0)

    def test_duplicate_realtime_rejected(self, toy_files):
        d, loc, rt = toy_files
        with open(rt, "a", newline="") as fh:
            csv.writer(fh).writerow(["a", 0, "f", 1.0])
        with pytest.raises(ValueError, match="duplicate"):
            load_dataset(loc, rt, _updates(d, []))

    def test_noncontiguous_weeks_rejected(self, tmp_path, toy_files):
        d, loc, _ = toy_files
        rt = _write(tmp_path / "rt2.csv", ["location_id", "week", "feature", "value"],
                    [["a", 0, "f", 1], ["a", 2, "f", 1], ["b", 0, "f", 1], ["b", 2, "f", 1]])
        with pytest.raises(ValueError, match="contiguous"):
            load_dataset(loc, rt, _updates(d, []))


class TestFill:
    def test_mixed_toy_case_matches_per_entry_rule(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(0, 10, size=(4, 3, 2))
        U = rng.uniform(20, 30, size=(4, 3, 2))
        mask = rng.random((4, 3, 2)) < 0.5
        lat = rng.integers(0, 5, size=(4, 3))
        filled, flat = fill_updates(U, mask, X, lat)
        for i in range(4):
            for t in range(3):
                for f in range(2):
                    assert filled[i, t, f] == (U[i, t, f] if mask[i, t, f] else X[i, t, f])
                assert flat[i, t] == (lat[i, t] if mask[i, t].any() else 0)

    def test_fully_revised_stream_untouched(self):
        U = np.arange(12.0).reshape(2, 3, 2)
        filled, _ = fill_updates(U, np.ones_like(U, bool), np.zeros_like(U))
        np.testing.assert_array_equal(filled, U)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fill_updates(np.zeros((2, 2, 2)), np.zeros((2, 2, 2), bool), np.zeros((2, 2, 1)))


class TestNormalize:
    def test_constant_series_maps_to_zero(self):
        X = np.full((2, 10, 3), 7.0)
        with pytest.warns(RuntimeWarning, match="zero-variance"):
            out, _ = normalize(X, X, X[:, :, 0], X[:, :, 0], 6)
        np.testing.assert_array_equal(out["X"], 0.0)

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        X = rng.lognormal(5, 1, size=(5, 20, 4))
        y = X[:, :, 2] * 1.1
        out, norm = normalize(X, X * 0.9, y, y, 12)
        np.testing.assert_allclose(norm.denormalize(out["X"]), X, rtol=0, atol=1e-12 * np.abs(X).max())
        np.testing.assert_allclose(norm.denormalize_target(out["y"]), y, atol=1e-12 * np.abs(y).max())

    def test_training_range_statistics_not_full_range(self):
        # level shift of +100 in the held-out weeks
        series = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 106.0, 107.0, 108.0, 109.0])
        X = series.reshape(1, 10, 1)
        norm = fit_normalizer(X, X[:, :, 0], 6)
        # hand computation on weeks 0..5: mean 3.5, population std sqrt(35/12)
        assert norm.mean[0, 0] == pytest.approx(3.5)
        assert norm.std[0, 0] == pytest.approx(np.sqrt(35 / 12))
        assert norm.mean[0, 0] != pytest.approx(series.mean())

    def test_no_leakage_from_held_out_values(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(3, 30, 2))
        a = fit_normalizer(X, X[:, :, 0], 18)
        X2 = X.copy()
        X2[:, 18:] += rng.normal(scale=50, size=X2[:, 18:].shape)
        b = fit_normalizer(X2, X2[:, :, 0], 18)
        for k in a.arrays():
            np.testing.assert_array_equal(a.arrays()[k], b.arrays()[k])


class TestSplit:
    def test_standard_hundred(self):
        s = split_dataset(100)
        assert s.train == (0, 60) and s.validation == (60, 80) and s.test == (80, 100)

    def test_standard_fifty(self):
        s = split_dataset(50)
        assert s.train == (0, 30) and s.validation == (30, 40) and s.test == (40, 50)

    def test_iterative_hundred(self):
        s = split_dataset(100, "iterative")
        assert s.train == (0, 50) and s.deploy == (50, 80)
        assert s.refresh == (60, 80) and s.test == (80, 100)

    @pytest.mark.parametrize("T", [5, 17, 63, 100, 250])
    def test_ranges_contiguous_and_ordered(self, T):
        s = split_dataset(T)
        assert s.train[0] == 0 and s.train[1] == s.validation[0]
        assert s.validation[1] == s.test[0] and s.test[1] == T

    def test_too_short(self):
        with pytest.raises(ValueError):
            split_dataset(4)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            split_dataset(100, "weird")


class TestSynthetic:
    def test_default_scale(self):
        ds = generate_synthetic()
        assert ds.X.shape == (1015, 63, 22)
        assert ds.y.mean() == pytest.approx(1098.7, rel=1e-9)
        assert ds.graph.edges_per_node == pytest.approx(2.67, abs=0.01)
        assert np.all(ds.X >= 0) and np.all(ds.latency >= 0)

    def test_same_seed_is_bitwise_identical(self):
        a = generate_synthetic(num_locations=30, num_steps=25, num_features=3, seed=9)
        b = generate_synthetic(num_locations=30, num_steps=25, num_features=3, seed=9)
        for x, y in [(a.X, b.X), (a.U, b.U), (a.latency, b.latency), (a.targets, b.targets)]:
            assert x.tobytes() == y.tobytes()
        c = generate_synthetic(num_locations=30, num_steps=25, num_features=3, seed=10)
        assert not np.array_equal(a.X, c.X)

    def test_degenerate_generator(self):
        ds = generate_synthetic(num_locations=20, num_steps=30, num_features=2, noise_sigma=0.0,
                                min_neighbors=1, max_neighbors=1, min_window=1, max_window=1)
        np.testing.assert_array_equal(ds.U, ds.X)
        np.testing.assert_array_equal(ds.X[:, :, ds.target_feature], ds.targets)

    def test_release_schedule(self):
        cfg = SyntheticConfig(num_locations=10, num_steps=20, latency_interval=4, stagger_releases=False)
        lat = release_latency(cfg)
        assert list(lat[0, :8]) == [3, 2, 1, 0, 3, 2, 1, 0]
        # release for weeks 16..19 lands on week 19, still inside the series
        assert lat[0, 19] == 0

    def test_latency_bounded_by_interval(self):
        ds = generate_synthetic(num_locations=15, num_steps=40, num_features=2, latency_interval=6)
        assert ds.latency.min() >= 0 and ds.latency.max() <= 5

    def test_input_bounds(self):
        with pytest.raises(ValueError):
            generate_synthetic(num_locations=5)

    def test_write_and_reload(self, tmp_path):
        ds = generate_synthetic(num_locations=12, num_steps=21, num_features=2, seed=3)
        m1 = write_dataset(tmp_path / "a", ds, {"seed": 3})
        back = load_dataset_dir(tmp_path / "a")
        np.testing.assert_allclose(back.X, ds.X, rtol=0, atol=0)
        np.testing.assert_array_equal(back.U, ds.U)
        np.testing.assert_array_equal(back.latency, ds.latency)
        np.testing.assert_array_equal(back.targets, ds.targets)
        np.testing.assert_array_equal(back.graph.adjacency, ds.graph.adjacency)
        m2 = write_dataset(tmp_path / "b", generate_synthetic(num_locations=12, num_steps=21,
                                                              num_features=2, seed=3), {"seed": 3})
        assert m1["checksums"] == m2["checksums"]
