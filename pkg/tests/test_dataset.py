import math

import numpy as np
import pytest

from radiozone.dataset import (
    Dataset, DatasetEntry, Measurement, TrainingExample, augment,
    collect_dataset, inject_errors, read_dataset, select_k_nearest,
    split_transmitters, write_dataset,
)
from radiozone.envgen import (EnvironmentConfig, build_environment,
                              ground_truth_rss, valid_grid_points)


def small_entry(tx=(55.0, 55.0), n=20, seed=0):
    rng = np.random.default_rng(seed)
    side = 1
    while side * side < n + 1:
        side += 1
    locs = [(float(i * 10 + 5), float(j * 10 + 5))
            for i in range(side) for j in range(side)]
    locs = [loc for loc in locs if loc != tx][:n]
    rng.shuffle(locs)
    ms = tuple(
        Measurement(rx_loc=loc, rss_dbm=float(-40 - rng.uniform(0, 30)), tx_id=0)
        for loc in locs
    )
    return DatasetEntry(tx_id=0, tx_loc=tx, measurements=ms)


class TestCollect:
    def test_counts_on_tiny_grid(self):
        cfg = EnvironmentConfig(grid_l=2, grid_w=2, n_buildings=0, shadow_noise_db=0.0)
        env = build_environment(cfg, seed=0)
        ds = collect_dataset(env, [(5.0, 5.0)], None)
        assert len(ds) == 1
        assert len(ds.entries[0].measurements) == 3  # own voxel excluded

    def test_123_transmitters_default_grid(self, default_env):
        pts = sorted(valid_grid_points(default_env))[:123]
        ds = collect_dataset(default_env, pts, np.random.default_rng(0))
        assert len(ds.entries) == 123

    def test_noiseless_values_match_oracle_replay(self, block_env):
        ds = collect_dataset(block_env, [(55.0, 55.0)], None)
        for m in ds.entries[0].measurements:
            assert m.rss_dbm == ground_truth_rss(block_env, (55.0, 55.0), m.rx_loc)

    def test_duplicate_transmitters_rejected(self, flat_env):
        with pytest.raises(ValueError):
            collect_dataset(flat_env, [(5.0, 5.0), (5.0, 5.0)], None)


class TestSelectKNearest:
    def test_axis_adjacent_voxels_win(self, flat_env):
        ds = collect_dataset(flat_env, [(55.0, 55.0)], None)
        ex = select_k_nearest(ds.entries[0], 4, valid_grid_points(flat_env))
        assert sorted(rx for rx, _ in ex.chosen) == [
            (45.0, 55.0), (55.0, 45.0), (55.0, 65.0), (65.0, 55.0)]

    def test_matches_exhaustive_sort_oracle(self, default_env):
        pts = sorted(valid_grid_points(default_env))
        ds = collect_dataset(default_env, [pts[1234]], np.random.default_rng(1))
        entry = ds.entries[0]
        valid = valid_grid_points(default_env)
        ex = select_k_nearest(entry, 200, valid)
        # oracle: full sort of every measurement by (distance, x, y)
        tx = entry.tx_loc
        ranked = sorted(
            entry.measurements,
            key=lambda m: (math.hypot(m.rx_loc[0] - tx[0], m.rx_loc[1] - tx[1]),
                           m.rx_loc[0], m.rx_loc[1]),
        )
        assert [rx for rx, _ in ex.chosen] == [m.rx_loc for m in ranked[:200]]

    def test_distances_non_decreasing_and_boundary_excluded_point(self):
        entry = small_entry(n=30)
        ex = select_k_nearest(entry, 10, None)
        tx = entry.tx_loc
        dists = [math.hypot(rx[0] - tx[0], rx[1] - tx[1]) for rx, _ in ex.chosen]
        assert dists == sorted(dists)
        left_out = [
            math.hypot(m.rx_loc[0] - tx[0], m.rx_loc[1] - tx[1])
            for m in entry.measurements
            if m.rx_loc not in {rx for rx, _ in ex.chosen}
        ]
        assert min(left_out) >= dists[-1]

    def test_deficit_error_names_the_numbers(self):
        entry = small_entry(n=5)
        with pytest.raises(ValueError, match="5 usable.*need 9"):
            select_k_nearest(entry, 9, None)


class TestAugment:
    def example(self, k=20):
        entry = small_entry(n=k)
        return select_k_nearest(entry, k, None)

    def test_small_scale_shapes(self):
        ex = self.example(k=20)
        out = augment(ex, m=10, s=5, rng=np.random.default_rng(0))
        assert len(out) == 10
        assert all(len(o.chosen) == 4 for o in out)
        assert all(o.tx_loc == ex.tx_loc for o in out)

    def test_k200_s5_m200_sizes(self):
        entry = small_entry(n=200)
        ex = select_k_nearest(entry, 200, None)
        out = augment(ex, m=200, s=5, rng=np.random.default_rng(0))
        assert len(out) == 200 and all(len(o.chosen) == 40 for o in out)

    def test_degenerate_full_subset_returns_original(self):
        ex = self.example()
        (only,) = augment(ex, m=1, s=1, rng=np.random.default_rng(0))
        assert only == ex

    def test_every_output_measurement_in_parent(self):
        ex = self.example()
        parent = set(ex.chosen)
        for out in augment(ex, m=25, s=3, rng=np.random.default_rng(1)):
            assert set(out.chosen) <= parent

    def test_subset_too_small_rejected(self):
        ex = self.example(k=6)
        with pytest.raises(ValueError):
            augment(ex, m=2, s=6, rng=np.random.default_rng(0))


class TestInjectErrors:
    def test_zero_means_identity(self, flat_env):
        ds = collect_dataset(flat_env, [(5.0, 5.0)], None)
        assert inject_errors(ds, 0.0, 0.0, np.random.default_rng(0)) is ds

    def test_empirical_means(self, default_env):
        pts = sorted(valid_grid_points(default_env))[:10]
        ds = collect_dataset(default_env, pts, np.random.default_rng(0))
        noisy = inject_errors(ds, 5.0, 5.0, np.random.default_rng(1))
        moves, drss = [], []
        for tx_id, entry in ds.entries.items():
            for a, b in zip(entry.measurements, noisy.entries[tx_id].measurements):
                moves.append(math.hypot(a.rx_loc[0] - b.rx_loc[0],
                                        a.rx_loc[1] - b.rx_loc[1]))
                drss.append(abs(a.rss_dbm - b.rss_dbm))
        assert len(moves) >= 10_000
        assert np.mean(moves) == pytest.approx(5.0, rel=0.05)
        assert np.mean(drss) == pytest.approx(5.0, rel=0.05)

    def test_corner_points_stay_inside(self, flat_env):
        ds = collect_dataset(flat_env, [(55.0, 55.0)], None)
        noisy = inject_errors(ds, 40.0, 0.0, np.random.default_rng(2),
                              area_extent_m=flat_env.grid.extent_m)
        for m in noisy.entries[0].measurements:
            assert 0.0 <= m.rx_loc[0] <= 100.0
            assert 0.0 <= m.rx_loc[1] <= 100.0

    def test_original_untouched(self, flat_env):
        ds = collect_dataset(flat_env, [(5.0, 5.0)], None)
        before = ds.entries[0].measurements
        inject_errors(ds, 3.0, 3.0, np.random.default_rng(0),
                      area_extent_m=flat_env.grid.extent_m)
        assert ds.entries[0].measurements == before


class TestSplit:
    def test_disjoint_70_30(self):
        locs = [(float(i), 0.0) for i in range(123)]
        train, test = split_transmitters(locs, 70, 30, np.random.default_rng(0))
        assert len(train) == 70 and len(test) == 30
        assert not set(train) & set(test)

    def test_empty_train_allowed(self):
        locs = [(float(i), 0.0) for i in range(5)]
        train, test = split_transmitters(locs, 0, 3, np.random.default_rng(0))
        assert train == [] and len(test) == 3

    def test_no_duplicates_over_many_seeds(self):
        locs = [(float(i), 0.0) for i in range(40)]
        for seed in range(100):
            train, test = split_transmitters(locs, 25, 10, np.random.default_rng(seed))
            combined = train + test
            assert len(set(combined)) == len(combined)

    def test_insufficient_transmitters(self):
        with pytest.raises(ValueError):
            split_transmitters([(0.0, 0.0)], 1, 1, np.random.default_rng(0))


def test_dataset_round_trip(tmp_path, block_env):
    ds = collect_dataset(block_env, [(55.0, 55.0), (75.0, 95.0)],
                         np.random.default_rng(0))
    path = tmp_path / "dataset.csv"
    write_dataset(ds, path)
    assert read_dataset(path) == ds
