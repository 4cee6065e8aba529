from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trafficnet import traffic_image as ti
from trafficnet.numerics import Rng

DAY = datetime(2015, 5, 1, tzinfo=timezone.utc)


def make_records(cells):
    """cells: {(sid, interval): [speeds]} at 2-min intervals."""
    records = []
    for (sid, j), speeds in cells.items():
        for s in speeds:
            records.append((sid, DAY + timedelta(minutes=2 * j, seconds=30), s))
    return records


class TestAggregate:
    def test_mean_of_two(self):
        series, rej = ti.aggregate(make_records({(0, 0): [40, 60]}), 2.0,
                                   DAY, DAY + timedelta(days=1))
        assert not rej
        assert series[0].speeds[0] == 50.0

    def test_day_length_720(self):
        series, _ = ti.aggregate(make_records({(0, 0): [30]}), 2.0,
                                 DAY, DAY + timedelta(days=1))
        assert len(series[0].speeds) == 720

    def test_empty_interval_is_missing(self):
        series, _ = ti.aggregate(make_records({(0, 0): [30]}), 2.0,
                                 DAY, DAY + timedelta(days=1))
        assert np.isnan(series[0].speeds[1])

    def test_rejects_negative_and_out_of_span(self):
        recs = [(0, DAY, -5.0), (0, DAY - timedelta(hours=1), 30.0), (0, DAY, 40.0)]
        series, rej = ti.aggregate(recs, 2.0, DAY, DAY + timedelta(days=1))
        assert len(rej) == 2
        assert series[0].speeds[0] == 40.0

    def test_constant_stream_gives_constant_series(self):
        cells = {(0, j): [55.0, 55.0] for j in range(720)}
        series, _ = ti.aggregate(make_records(cells), 2.0, DAY, DAY + timedelta(days=1))
        assert np.all(series[0].speeds == 55.0)


class TestImpute:
    def test_single_gap_temporal_mean(self):
        s = ti.SectionSpeedSeries(0, [30.0, np.nan, 50.0])
        out = ti.impute([s])
        assert out[0].speeds[1] == 40.0

    def test_four_neighbor_mean(self):
        grid = np.array([[1.0, 20.0, 1.0],
                         [20.0, np.nan, 40.0],
                         [1.0, 40.0, 1.0]])
        # temporal neighbors 20, 40 and spatial neighbors 20 (above), 40 (below)
        grid[0, 1] = 30.0
        grid[2, 1] = 30.0
        series = [ti.SectionSpeedSeries(i, grid[i]) for i in range(3)]
        out = ti.impute(series)
        assert out[1].speeds[1] == 30.0  # mean(20, 40, 30, 30)

    def test_two_adjacent_gaps_two_passes(self):
        s = ti.SectionSpeedSeries(0, [30.0, np.nan, np.nan, 60.0])
        out = ti.impute([s])
        # pass 1: both gaps see one known neighbor each (30 and 60);
        # pass procedure fills both, none remain
        assert not np.isnan(out[0].speeds).any()
        assert out[0].speeds[1] == 30.0 and out[0].speeds[2] == 60.0

    def test_idempotent_and_preserves_known(self):
        rng = Rng(4)
        vals = rng.uniform(10, 70, (3, 6))
        series = [ti.SectionSpeedSeries(i, vals[i].copy()) for i in range(3)]
        out = ti.impute(series)
        for i in range(3):
            assert np.array_equal(out[i].speeds, vals[i])

    def test_all_missing_errors(self):
        with pytest.raises(ValueError):
            ti.impute([ti.SectionSpeedSeries(0, [np.nan, np.nan])])

    def test_over_half_missing_errors(self):
        with pytest.raises(ValueError):
            ti.impute([ti.SectionSpeedSeries(0, [1.0, np.nan, np.nan, np.nan])])


class TestBuildMatrix:
    def test_permutation_order(self):
        series = [ti.SectionSpeedSeries(0, [1.0, 2, 3]),
                  ti.SectionSpeedSeries(1, [4.0, 5, 6])]
        m = ti.build_matrix(series, [1, 0])
        assert np.array_equal(m.grid[0], [4.0, 5, 6])
        assert np.array_equal(m.grid[1], [1.0, 2, 3])

    def test_full_scale_shape(self):
        series = [ti.SectionSpeedSeries(i, np.full(720, 50.0)) for i in range(236)]
        m = ti.build_matrix(series, list(range(236)))
        assert m.grid.shape == (236, 720)

    def test_duplicate_order_errors(self):
        series = [ti.SectionSpeedSeries(0, [1.0]), ti.SectionSpeedSeries(1, [2.0])]
        with pytest.raises(ValueError):
            ti.build_matrix(series, [0, 0])

    def test_incomplete_series_errors(self):
        with pytest.raises(ValueError):
            ti.build_matrix([ti.SectionSpeedSeries(0, [np.nan])], [0])


class TestNormalize:
    def test_half(self):
        m = ti.TimeSpaceMatrix(np.array([[40.0]]), [0])
        assert ti.normalize(m, 80.0)[0, 0] == 0.5

    def test_zero_fixed_point(self):
        m = ti.TimeSpaceMatrix(np.zeros((2, 3)), [0, 1])
        assert np.all(ti.normalize(m, 60.0) == 0.0)

    def test_roundtrip(self):
        grid = Rng(3).uniform(0, 75, (4, 9))
        m = ti.TimeSpaceMatrix(grid, list(range(4)))
        back = ti.denormalize(ti.normalize(m, 80.0), 80.0)
        rel = np.abs(back - grid) / np.maximum(np.abs(grid), 1e-300)
        assert rel.max() < 1e-12

    def test_vmax_below_max_errors(self):
        m = ti.TimeSpaceMatrix(np.array([[90.0]]), [0])
        with pytest.raises(ValueError):
            ti.normalize(m, 80.0)


class TestMakeSamples:
    def test_task2_count_per_day(self):
        grid = Rng(1).uniform(0, 1, (3, 720))
        samples = ti.make_samples(grid, ti.TaskSpec(20, 5, 3))
        assert len(samples) == 696

    def test_single_sample_boundary(self):
        grid = Rng(2).uniform(0, 1, (2, 25))
        samples = ti.make_samples(grid, ti.TaskSpec(20, 5, 2))
        assert len(samples) == 1
        assert np.array_equal(samples[0].input[0], grid[:, :20])
        assert np.array_equal(samples[0].target, grid[:, 20:].reshape(-1))

    def test_target_length_table2(self):
        grid = Rng(3).uniform(0, 1, (236, 30))
        samples = ti.make_samples(grid, ti.TaskSpec(20, 5, 236))
        assert samples[0].target.shape == (1180,)

    def test_too_short_errors(self):
        with pytest.raises(ValueError):
            ti.make_samples(np.zeros((2, 10)), ti.TaskSpec(8, 3, 2))

    def test_window_consistency(self):
        grid = Rng(6).uniform(0, 1, (4, 40))
        task = ti.TaskSpec(7, 3, 4)
        for s in ti.make_samples(grid, task, "d0"):
            _, i = s.origin
            assert np.array_equal(s.input[0], grid[:, i:i + 7])
            assert np.array_equal(s.target, grid[:, i + 7:i + 10].reshape(-1))

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10))
    @settings(max_examples=50)
    def test_sample_count_formula(self, t_in, t_out, extra):
        n = t_in + t_out + extra
        grid = np.zeros((2, n))
        samples = ti.make_samples(grid, ti.TaskSpec(t_in, t_out, 2))
        assert len(samples) == n - t_in - t_out + 1


class TestFileFormats:
    def test_records_csv_roundtrip(self, tmp_path):
        recs = [(3, DAY + timedelta(minutes=5), 41.25), (1, DAY, 0.0)]
        path = tmp_path / "records.csv"
        ti.write_records_csv(path, recs)
        assert ti.read_records_csv(path) == recs

    def test_matrix_csv_roundtrip(self, tmp_path):
        grid = Rng(8).uniform(0, 70, (3, 5))
        m = ti.TimeSpaceMatrix(grid, [0, 1, 2], "day001")
        path = tmp_path / "m.csv"
        ti.write_matrix_csv(path, m, 80.0)
        m2, vmax = ti.read_matrix_csv(path)
        assert vmax == 80.0
        assert m2.day_label == "day001"
        assert np.array_equal(m2.grid, grid)

    def test_pgm_pixels(self, tmp_path):
        m = ti.TimeSpaceMatrix(np.array([[0.0, 40.0], [80.0, 20.0]]), [0, 1], "d")
        path = tmp_path / "m.pgm"
        ti.write_pgm(path, m, 80.0)
        data = path.read_bytes()
        assert data.startswith(b"P5\n# day=d\n2 2\n255\n")
        assert list(data[-4:]) == [0, 128, 255, 64]


def test_default_vmax_rounds_up():
    m = ti.TimeSpaceMatrix(np.array([[63.2]]), [0])
    assert ti.default_vmax([m]) == 70.0


def test_task_presets():
    assert ti.TASK_PRESETS == {1: (15, 5), 2: (20, 5), 3: (15, 10), 4: (20, 10)}
    with pytest.raises(ValueError):
        ti.TaskSpec.preset(5, 10)
