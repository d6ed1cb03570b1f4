#!/usr/bin/env python
# -*- coding: utf-8 -*-

import os
import shutil
import tempfile

import numpy as np
import pandas as pd
import pytest

from core.config import SynthConfig, load_descriptor
from core.data.dataset import (
    CovariateSeries,
    DemandSeries,
    chronological_split,
    interpolate_linear,
    load_dataset,
    load_from_descriptor,
    make_windows,
    normalize_covariates,
    read_table,
    stack_features,
    window_count,
    write_series_csv,
)
from core.data.synthetic import generate_synthetic, grid_pairs
from core.errors import (
    AlignmentError,
    DatasetParseError,
    EmptyBatchError,
    InsufficientDataError,
    OccupancyRangeError,
)
from core.storage.bundles import write_dataset

START = pd.Timestamp("2022-06-19")


def _series(values, step_minutes=5):
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    area_ids = tuple(f"a{k}" for k in range(values.shape[0]))
    return DemandSeries(values, area_ids, step_minutes, START)


def _covariates(n_areas, n_steps, price=1.0, temperature=30.0):
    return CovariateSeries(
        np.full((n_areas, n_steps), price), np.full((n_areas, n_steps), temperature), 5, START
    )


class TestDemandSeries:
    """Test cases for demand validation"""

    def test_minimal_series(self):
        demand = _series([[0.5]])
        assert demand.values.shape == (1, 1)

    def test_out_of_range_rejected(self):
        with pytest.raises(OccupancyRangeError):
            _series([[0.2, 1.2, 0.4]])

    def test_values_are_read_only(self):
        demand = _series([[0.1, 0.2]])
        with pytest.raises(ValueError):
            demand.values[0, 0] = 0.9


class TestInterpolation:
    """Test cases for temperature densification"""

    def test_midpoint(self):
        dense = interpolate_linear([0, 30], [10.0, 16.0], step_minutes=5)
        assert dense[3] == pytest.approx(13.0)

    def test_constant_preserved(self):
        dense = interpolate_linear([0, 30, 60, 90], [20.0] * 4, step_minutes=5)
        assert np.all(dense == 20.0)

    def test_piecewise_oracle(self):
        dense = interpolate_linear([0, 30, 60], [0.0, 6.0, 6.0], step_minutes=5)
        expected = np.array([0, 1, 2, 3, 4, 5, 6, 6, 6, 6, 6, 6, 6], dtype=np.float64)
        np.testing.assert_allclose(dense, expected, atol=1e-12)

    def test_sample_times_reproduced(self):
        dense = interpolate_linear([0, 30, 60], [1.5, -2.25, 7.0], step_minutes=5)
        assert dense[0] == 1.5 and dense[6] == -2.25 and dense[12] == 7.0

    @pytest.mark.parametrize("slope,offset", [(0.25, -3.0), (-1.5e-2, 18.5), (0.0, 7.0)])
    def test_affine_input_reproduced(self, slope, offset):
        times = np.array([0.0, 20.0, 35.0, 90.0, 95.0, 240.0])
        dense = interpolate_linear(times, offset + slope * times, step_minutes=5)
        grid = 5.0 * np.arange(len(dense))
        assert len(dense) == 49
        np.testing.assert_allclose(dense, offset + slope * grid, atol=1e-12, rtol=0)

    def test_single_sample_rejected(self):
        with pytest.raises(InsufficientDataError):
            interpolate_linear([0], [10.0])

    def test_unordered_times_rejected(self):
        with pytest.raises(AlignmentError):
            interpolate_linear([0, 30, 30], [1.0, 2.0, 3.0])


class TestChronologicalSplit:
    """Test cases for train/val/test splitting"""

    @pytest.mark.parametrize("t_steps,expected", [
        (8640, ((0, 5184), (5184, 6048), (6048, 8640))),
        (10, ((0, 6), (6, 7), (7, 10))),
    ])
    def test_ranges(self, t_steps, expected):
        split = chronological_split(t_steps)
        assert (split.train, split.val, split.test) == expected

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            chronological_split(9)

    def test_partition_is_contiguous(self):
        split = chronological_split(4033)
        assert split.train[1] == split.val[0] and split.val[1] == split.test[0]
        assert sum(split.sizes().values()) == 4033


class TestWindows:
    """Test cases for sliding-window sample construction"""

    def test_count_formula(self):
        assert window_count(2592, 12, (3, 6, 9, 12)) == 2569

    @pytest.mark.parametrize("lookback,horizons", [(12, (3, 6, 9, 12)), (4, (1,)), (1, (2, 5))])
    def test_count_matches_enumeration(self, lookback, horizons):
        for length in range(1, 201):
            anchors = [t for t in range(length) if t - lookback + 1 >= 0 and t + max(horizons) < length]
            assert max(window_count(length, lookback, horizons), 0) == len(anchors)
            if anchors:
                demand = _series(np.full((1, length), 0.5))
                batch = make_windows(demand, _covariates(1, length), (0, length), lookback, horizons)
                assert batch.anchors.tolist() == anchors

    def test_boundary_single_sample(self):
        values = np.linspace(0.0, 0.92, 24)[None, :]
        demand = _series(values)
        batch = make_windows(demand, _covariates(1, 24), (0, 24), lookback=12, horizons=(12,))
        assert len(batch) == 1
        assert batch.targets[0, 0, 0] == values[0, 23]
        assert batch.anchors.tolist() == [11]

    def test_inputs_and_targets_align(self):
        rng = np.random.default_rng(0)
        values = rng.random((3, 60))
        demand = _series(values)
        cov = CovariateSeries(rng.random((3, 60)), rng.random((3, 60)), 5, START)
        batch = make_windows(demand, cov, (10, 60), lookback=4, horizons=(1, 3))
        assert batch.inputs.shape == (len(batch), 3, 4, 3)
        s, t = 5, batch.anchors[5]
        np.testing.assert_array_equal(batch.inputs[s, :, :, 0], values[:, t - 3:t + 1])
        np.testing.assert_array_equal(batch.inputs[s, :, :, 1], cov.price[:, t - 3:t + 1])
        np.testing.assert_array_equal(batch.targets[s, :, 1], values[:, t + 3])
        assert batch.anchors.max() + 3 < 60

    def test_range_too_short(self):
        demand = _series(np.full((1, 20), 0.5))
        with pytest.raises(EmptyBatchError):
            make_windows(demand, _covariates(1, 20), (0, 20), lookback=12, horizons=(12,))

    def test_stack_features_drops_covariates(self):
        demand = _series(np.full((2, 30), 0.5))
        batch = make_windows(demand, _covariates(2, 30, price=0.25), (0, 30), lookback=4, horizons=(2,))
        selected = stack_features(batch, ("demand", "price"))
        assert selected.shape[-1] == 2
        assert np.all(selected[..., 1] == 0.25)


class TestNormalization:
    """Test cases for min-max covariate scaling"""

    def setup_method(self):
        temperature = np.array([[25.0, 35.0, 30.0, 40.0]])
        self.cov = CovariateSeries(np.ones((1, 4)), temperature, 5, START)

    def test_midpoint_and_out_of_range(self):
        scaled, stats = normalize_covariates(self.cov, (0, 3))
        assert scaled.temperature[0, 2] == pytest.approx(0.5)
        assert scaled.temperature[0, 3] == pytest.approx(1.5)
        assert stats.temperature.minimum == 25.0 and stats.temperature.maximum == 35.0

    def test_degenerate_price(self):
        scaled, stats = normalize_covariates(self.cov, (0, 3))
        assert stats.price.degenerate
        assert np.all(scaled.price == 0.0)

    def test_stats_round_trip(self):
        _, stats = normalize_covariates(self.cov, (0, 3))
        restored = type(stats).from_dict(stats.to_dict())
        assert restored == stats


class TestLoadDataset:
    """Test cases for reading dataset tables"""

    @classmethod
    def setup_class(cls):
        cls.tmp = tempfile.mkdtemp()
        cls.area_ids = ("a0", "a1")
        cls.values = np.tile(np.linspace(0.1, 0.9, 24), (2, 1))
        cls.demand_path = os.path.join(cls.tmp, "demand.csv")
        write_series_csv(cls.demand_path, cls.values, cls.area_ids, START, 5)

        cls.price_path = os.path.join(cls.tmp, "price.csv")
        write_series_csv(cls.price_path, np.full((1, 24), 1.2), ("city",), START, 5)

        cls.temperature_path = os.path.join(cls.tmp, "temperature.csv")
        minutes = 30.0 * np.arange(5)
        write_series_csv(cls.temperature_path, np.tile(20.0 + minutes / 10.0, (2, 1)), cls.area_ids, START, 30)

    @classmethod
    def teardown_class(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)

    def test_load_aligns_covariates(self):
        demand, cov = load_dataset(self.demand_path, self.price_path, self.temperature_path)
        assert demand.area_ids == self.area_ids
        np.testing.assert_array_equal(demand.values, self.values)
        assert cov.price.shape == (2, 24)
        assert np.all(cov.price == 1.2)
        assert cov.temperature[0, 3] == pytest.approx(21.5)

    def test_row_cited_for_out_of_range_value(self):
        values = self.values.copy()
        values[1, 16] = 1.2
        path = os.path.join(self.tmp, "bad_range.csv")
        frame = pd.DataFrame(values.T, columns=list(self.area_ids))
        frame.insert(0, "time", pd.date_range(START, periods=24, freq="5min").strftime("%Y-%m-%dT%H:%M:%S"))
        frame.to_csv(path, index=False)
        with pytest.raises(OccupancyRangeError) as excinfo:
            load_dataset(path, self.price_path, self.temperature_path)
        assert "row 17" in str(excinfo.value)
        assert excinfo.value.offenders[0][:2] == (17, "a1")

    def test_time_step_cited_in_area_by_time_layout(self):
        values = self.values.copy()
        values[1, 16] = 1.2
        path = os.path.join(self.tmp, "bad_range_by_area.csv")
        times = pd.date_range(START, periods=24, freq="5min").strftime("%Y-%m-%dT%H:%M:%S")
        frame = pd.DataFrame(values, columns=list(times))
        frame.insert(0, "area_id", list(self.area_ids))
        frame.to_csv(path, index=False)
        with pytest.raises(OccupancyRangeError) as excinfo:
            load_dataset(path, self.price_path, self.temperature_path, orientation="area_by_time")
        message = str(excinfo.value)
        assert "time step 17 area 'a1'" in message
        assert "row 17" not in message
        assert excinfo.value.unit == "time step"

    def test_bad_header_timestamp_in_area_by_time_layout(self):
        path = os.path.join(self.tmp, "bad_header.csv")
        with open(path, "w") as handle:
            handle.write("area_id,2022-06-19T00:00:00,soon\na0,0.1,0.2\n")
        with pytest.raises(DatasetParseError) as excinfo:
            read_table(path, orientation="area_by_time")
        assert excinfo.value.row is None
        assert excinfo.value.column == "soon"

    def test_parse_error_names_cell(self):
        path = os.path.join(self.tmp, "bad_cell.csv")
        with open(path, "w") as handle:
            handle.write("time,a0,a1\n2022-06-19T00:00:00,0.1,0.2\n2022-06-19T00:05:00,0.3,abc\n")
        with pytest.raises(DatasetParseError) as excinfo:
            load_dataset(path, self.price_path, self.temperature_path)
        assert excinfo.value.row == 2
        assert excinfo.value.column == "a1"

    def test_missing_file_named(self):
        missing = os.path.join(self.tmp, "nope.csv")
        with pytest.raises(DatasetParseError) as excinfo:
            load_dataset(self.demand_path, self.price_path, missing)
        assert missing in str(excinfo.value)

    def test_area_by_time_orientation(self):
        path = os.path.join(self.tmp, "by_area.csv")
        times = pd.date_range(START, periods=24, freq="5min").strftime("%Y-%m-%dT%H:%M:%S")
        frame = pd.DataFrame(self.values, columns=list(times))
        frame.insert(0, "area_id", list(self.area_ids))
        frame.to_csv(path, index=False)
        area_ids, stamps, values = read_table(path, orientation="area_by_time")
        assert area_ids == self.area_ids
        assert stamps[1] - stamps[0] == pd.Timedelta(minutes=5)
        np.testing.assert_array_equal(values, self.values)


class TestSynthetic:
    """Test cases for the synthetic generator"""

    config = SynthConfig(n_areas=9, groups=3, t_steps=288, noise=0.0)

    def test_seed_determinism(self):
        first = generate_synthetic(self.config, seed=7)
        second = generate_synthetic(self.config, seed=7)
        np.testing.assert_array_equal(first.demand.values, second.demand.values)
        np.testing.assert_array_equal(first.poi.counts, second.poi.counts)
        np.testing.assert_array_equal(first.labels, second.labels)

    def test_noiseless_groups_identical(self):
        data = generate_synthetic(self.config, seed=3)
        for g in range(3):
            members = data.demand.values[data.labels == g]
            assert np.all(members == members[0])

    def test_between_group_correlation_lower(self):
        data = generate_synthetic(self.config, seed=3)
        corr = np.corrcoef(data.demand.values)
        same = data.labels[:, None] == data.labels[None, :]
        assert corr[~same].max() < corr[same].min()

    def test_grid_is_connected(self):
        pairs = grid_pairs(10)
        reached, frontier = {0}, [0]
        while frontier:
            k = frontier.pop()
            for a, b in pairs:
                for x, y in ((a, b), (b, a)):
                    if x == k and y not in reached:
                        reached.add(y)
                        frontier.append(y)
        assert reached == set(range(10))

    def test_bundle_round_trip(self):
        data = generate_synthetic(self.config, seed=1)
        tmp = tempfile.mkdtemp()
        try:
            descriptor = load_descriptor(str(write_dataset(tmp, data.demand, data.cov, data.poi,
                                                           data.neighbor_pairs, data.labels)))
            demand, cov = load_from_descriptor(descriptor)
            np.testing.assert_array_equal(demand.values, data.demand.values)
            np.testing.assert_array_equal(cov.price, data.cov.price)
            np.testing.assert_array_equal(cov.temperature, data.cov.temperature)
            assert demand.start_time == data.demand.start_time
        finally:
            shutil.rmtree(tmp, ignore_errors=True)
