# Citywide occupancy dataset: loading, interpolation, splitting, windows

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from core.config import FEATURE_ORDER, DatasetDescriptor
from core.errors import (
    AlignmentError,
    DatasetParseError,
    EmptyBatchError,
    InsufficientDataError,
    OccupancyRangeError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
IndexRange = Tuple[int, int]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class DemandSeries:
    """Occupancy ratio per area and step, shape [N_areas x T_steps]"""

    values: np.ndarray
    area_ids: Tuple[str, ...]
    step_minutes: int = 5
    start_time: pd.Timestamp = pd.Timestamp("2022-06-19")

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise AlignmentError(f"demand must be a non-empty [areas x steps] matrix, got {values.shape}")
        if len(self.area_ids) != values.shape[0]:
            raise AlignmentError(f"{len(self.area_ids)} area ids for {values.shape[0]} demand rows")
        if np.isnan(values).any():
            raise AlignmentError("demand contains missing entries")
        bad = np.argwhere((values < 0.0) | (values > 1.0))
        if len(bad):
            offenders = [(int(t) + 1, self.area_ids[a], float(values[a, t])) for a, t in bad]
            raise OccupancyRangeError("demand", offenders, unit="step")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "area_ids", tuple(str(a) for a in self.area_ids))
        object.__setattr__(self, "start_time", pd.Timestamp(self.start_time))

    @property
    def n_areas(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    def times(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start_time, periods=self.n_steps, freq=pd.Timedelta(minutes=self.step_minutes))


@dataclass(frozen=True)
class CovariateSeries:
    """Price and temperature on the demand grid, each [N_areas x T_steps]"""

    price: np.ndarray
    temperature: np.ndarray
    step_minutes: int = 5
    start_time: pd.Timestamp = pd.Timestamp("2022-06-19")

    def __post_init__(self):
        price = _frozen(self.price)
        temperature = _frozen(self.temperature)
        if price.shape != temperature.shape or price.ndim != 2:
            raise AlignmentError(f"price {price.shape} and temperature {temperature.shape} grids differ")
        if np.isnan(price).any() or np.isnan(temperature).any():
            raise AlignmentError("covariates contain gaps")
        object.__setattr__(self, "price", price)
        object.__setattr__(self, "temperature", temperature)
        object.__setattr__(self, "start_time", pd.Timestamp(self.start_time))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.price.shape

    def check_pairs_with(self, demand: DemandSeries) -> None:
        if self.shape != demand.values.shape:
            raise AlignmentError(f"covariate grid {self.shape} does not match demand grid {demand.values.shape}")
        if self.step_minutes != demand.step_minutes or self.start_time != demand.start_time:
            raise AlignmentError("covariate and demand time grids differ")


@dataclass(frozen=True)
class SplitIndex:
    """Chronological half-open index ranges"""

    train: IndexRange
    val: IndexRange
    test: IndexRange

    def ranges(self) -> Dict[str, IndexRange]:
        return {"train": self.train, "val": self.val, "test": self.test}

    def sizes(self) -> Dict[str, int]:
        return {name: stop - start for name, (start, stop) in self.ranges().items()}


@dataclass(frozen=True)
class WindowBatch:
    """Sliding-window samples

    inputs: [B x N x lookback x 3] ordered (demand, price, temperature)
    targets: [B x N x H] occupancy at anchor + horizon
    anchors: absolute step index of the last input step of every sample
    """

    inputs: np.ndarray
    targets: np.ndarray
    horizon_offsets: Tuple[int, ...]
    anchors: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def lookback(self) -> int:
        return self.inputs.shape[2]

    @property
    def n_areas(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices: Sequence[int]) -> "WindowBatch":
        indices = np.asarray(indices, dtype=np.int64)
        anchors = self.anchors[indices] if len(self.anchors) else self.anchors
        return WindowBatch(self.inputs[indices], self.targets[indices], self.horizon_offsets, anchors)


@dataclass(frozen=True)
class ScaleStats:
    minimum: float
    maximum: float
    degenerate: bool

    def apply(self, values: np.ndarray) -> np.ndarray:
        if self.degenerate:
            return np.zeros_like(values)
        return (values - self.minimum) / (self.maximum - self.minimum)

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        if self.degenerate:
            return np.full_like(scaled, self.minimum)
        return scaled * (self.maximum - self.minimum) + self.minimum


@dataclass(frozen=True)
class NormStats:
    """Min-max statistics of the covariates over the training range"""

    price: ScaleStats
    temperature: ScaleStats
    train_range: IndexRange

    def to_dict(self) -> Dict[str, Any]:
        return {
            "price": vars(self.price).copy(),
            "temperature": vars(self.temperature).copy(),
            "train_range": list(self.train_range),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NormStats":
        return cls(
            price=ScaleStats(**data["price"]),
            temperature=ScaleStats(**data["temperature"]),
            train_range=tuple(data["train_range"]),
        )


def interpolate_linear(sample_minutes: Sequence[float], values: Sequence[float],
                       step_minutes: int = 5, n_steps: Optional[int] = None) -> np.ndarray:
    """Densify a sparse series onto a regular grid by linear interpolation

    The output grid starts at the first sample time. Values at original sample
    times are reproduced exactly; steps past the last sample hold its value.

    Args:
        sample_minutes: Sample times in minutes, strictly increasing
        values: Sample values
        step_minutes: Output grid spacing
        n_steps: Output length; defaults to the span of the samples

    Returns:
        Dense series of length n_steps
    """
    times = np.asarray(sample_minutes, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if times.shape != values.shape or times.ndim != 1:
        raise AlignmentError("sample times and values must be 1-D and of equal length")
    if len(times) < 2:
        raise InsufficientDataError(f"linear interpolation needs at least 2 samples, got {len(times)}")
    if np.any(np.diff(times) <= 0):
        raise AlignmentError("sample times must be strictly increasing")
    if n_steps is None:
        n_steps = int(np.floor((times[-1] - times[0]) / step_minutes)) + 1
    grid = times[0] + step_minutes * np.arange(n_steps, dtype=np.float64)
    return np.interp(grid, times, values)


def _hold_resample(sample_minutes: np.ndarray, values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Piecewise-constant resampling (tariffs change in steps)"""
    idx = np.searchsorted(sample_minutes, grid, side="right") - 1
    return values[np.clip(idx, 0, len(values) - 1)]


def chronological_split(t_steps: int, ratios: Tuple[int, int, int] = (6, 1, 3)) -> SplitIndex:
    """Split [0, T) into train/val/test in chronological order

    Train and val lengths are floored; the remainder goes to test.
    """
    if t_steps < 10:
        raise InsufficientDataError(f"at least 10 steps are needed for a split, got {t_steps}")
    total = float(sum(ratios))
    n_train = int(np.floor(t_steps * ratios[0] / total))
    n_val = int(np.floor(t_steps * ratios[1] / total))
    return SplitIndex(
        train=(0, n_train),
        val=(n_train, n_train + n_val),
        test=(n_train + n_val, t_steps),
    )


def window_count(range_length: int, lookback: int, horizons: Sequence[int]) -> int:
    return range_length - lookback - max(horizons) + 1


def make_windows(demand: DemandSeries, cov: CovariateSeries, index_range: IndexRange,
                 lookback: int = 12, horizons: Sequence[int] = (3, 6, 9, 12)) -> WindowBatch:
    """Cut one split range into sliding-window samples

    Each admissible anchor t yields inputs over steps [t-lookback+1 .. t] and
    targets demand[t+h] for every horizon h. No window leaves the range.
    """
    cov.check_pairs_with(demand)
    start, stop = index_range
    horizons = tuple(int(h) for h in horizons)
    count = window_count(stop - start, lookback, horizons)
    if count <= 0:
        raise EmptyBatchError(
            f"range [{start}, {stop}) is too short for lookback {lookback} and horizon {max(horizons)}"
        )

    stacked = np.stack([demand.values, cov.price, cov.temperature], axis=-1)[:, start:stop]
    windows = sliding_window_view(stacked, lookback, axis=1)[:, :count]
    inputs = np.ascontiguousarray(windows.transpose(1, 0, 3, 2))

    anchors = start + lookback - 1 + np.arange(count)
    targets = np.stack([demand.values[:, anchors + h] for h in horizons], axis=-1)
    targets = np.ascontiguousarray(targets.transpose(1, 0, 2))
    return WindowBatch(inputs, targets, horizons, anchors)


def normalize_covariates(cov: CovariateSeries, train_range: IndexRange) -> Tuple[CovariateSeries, NormStats]:
    """Min-max scale price and temperature with statistics of the training range

    Values outside the training range map outside [0, 1]; nothing is clamped.
    A covariate that is constant over the training range maps to zeros and is
    flagged degenerate.
    """
    start, stop = train_range
    if stop <= start:
        raise InsufficientDataError("training range is empty")

    stats = {}
    for name in ("price", "temperature"):
        window = getattr(cov, name)[:, start:stop]
        lo, hi = float(window.min()), float(window.max())
        degenerate = hi == lo
        if degenerate:
            logger.warning(f"{name} is constant ({lo:g}) over the training range; scaled to zeros")
        stats[name] = ScaleStats(lo, hi, degenerate)

    scaled = CovariateSeries(
        price=stats["price"].apply(cov.price),
        temperature=stats["temperature"].apply(cov.temperature),
        step_minutes=cov.step_minutes,
        start_time=cov.start_time,
    )
    return scaled, NormStats(stats["price"], stats["temperature"], tuple(train_range))


def _numeric_block(frame: pd.DataFrame, path: PathLike, row_offset: int = 1) -> np.ndarray:
    """Convert a string frame to floats, naming the first unparseable cell"""
    try:
        values = frame.to_numpy(dtype=np.float64)
        bad = np.isnan(values)
    except ValueError:
        values = None
        bad = frame.apply(pd.to_numeric, errors="coerce").isna().to_numpy()
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raw = frame.iat[r, c]
        detail = "missing value" if raw.strip() in ("", "nan", "NaN") else f"not a number: '{raw}'"
        raise DatasetParseError(str(path), int(r) + row_offset, str(frame.columns[c]), detail)
    return values


def read_table(path: PathLike, orientation: str = "time_by_area") -> Tuple[Tuple[str, ...], pd.DatetimeIndex, np.ndarray]:
    """Read a delimited series table

    time_by_area: header `time,<area_1>,...`, one row per step.
    area_by_time: header `area_id,<time_1>,...`, one row per area.
    Row numbers in errors count data rows from 1; in the area_by_time layout a
    bad timestamp is reported by its header column.

    Returns:
        (area ids, timestamps, values [N x T])
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetParseError(str(path), None, None, "file does not exist")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DatasetParseError(str(path), None, None, str(e)) from e
    if frame.shape[1] < 2 or frame.shape[0] < 1:
        raise DatasetParseError(str(path), None, None, "need a key column and at least one value column")

    if orientation == "time_by_area":
        raw_times = frame.iloc[:, 0]
        area_ids = tuple(str(c).strip() for c in frame.columns[1:])
        values = _numeric_block(frame.iloc[:, 1:], path).T
    elif orientation == "area_by_time":
        raw_times = pd.Series(frame.columns[1:])
        area_ids = tuple(frame.iloc[:, 0].astype(str).str.strip())
        values = _numeric_block(frame.iloc[:, 1:], path)
    else:
        raise DatasetParseError(str(path), None, None, f"unknown orientation '{orientation}'")

    times = pd.to_datetime(raw_times, errors="coerce")
    if times.isna().any():
        first = int(np.flatnonzero(times.isna().to_numpy())[0])
        detail = f"bad timestamp '{raw_times.iloc[first]}'"
        if orientation == "area_by_time":
            raise DatasetParseError(str(path), None, str(raw_times.iloc[first]), f"{detail} in the header")
        raise DatasetParseError(str(path), first + 1, frame.columns[0], detail)
    return area_ids, pd.DatetimeIndex(times), values


def _check_grid(path: PathLike, times: pd.DatetimeIndex, step_minutes: int) -> None:
    if len(times) < 2:
        return
    steps = np.diff(times.asi8) / 6e10
    if not np.all(steps == step_minutes):
        raise AlignmentError(f"{path}: timestamps are not on a regular {step_minutes}-minute grid")


def _align_covariate(name: str, path: PathLike, orientation: str, step_minutes: int,
                     demand: DemandSeries, interpolate: bool) -> np.ndarray:
    area_ids, times, values = read_table(path, orientation)
    _check_grid(path, times, step_minutes)
    if step_minutes % demand.step_minutes:
        raise AlignmentError(f"{path}: step {step_minutes} min is not a multiple of {demand.step_minutes} min")
    if times[0] > demand.start_time:
        raise AlignmentError(f"{path}: {name} starts at {times[0]}, after demand start {demand.start_time}")

    sample_minutes = (times.asi8 - demand.start_time.value) / 6e10
    grid = demand.step_minutes * np.arange(demand.n_steps, dtype=np.float64)
    if step_minutes == demand.step_minutes:
        offset = int(round(-sample_minutes[0] / step_minutes))
        dense = values[:, offset:offset + demand.n_steps]
        if dense.shape[1] != demand.n_steps:
            raise AlignmentError(f"{path}: {name} covers {dense.shape[1]} of {demand.n_steps} demand steps")
    elif interpolate:
        if len(sample_minutes) < 2:
            raise InsufficientDataError(f"{path}: need at least 2 {name} samples to interpolate")
        dense = np.stack([np.interp(grid, sample_minutes, row) for row in values])
    else:
        dense = np.stack([_hold_resample(sample_minutes, row, grid) for row in values])

    if len(area_ids) == 1 and (demand.n_areas == 1 or area_ids[0] not in demand.area_ids):
        return np.repeat(dense, demand.n_areas, axis=0)
    missing = [a for a in demand.area_ids if a not in area_ids]
    if missing:
        raise AlignmentError(f"{path}: {name} lacks areas {', '.join(missing[:5])}")
    order = [area_ids.index(a) for a in demand.area_ids]
    return dense[order]


def load_dataset(demand_path: PathLike, price_path: PathLike, temperature_path: PathLike,
                 orientation: str = "time_by_area", step_minutes: int = 5,
                 price_step_minutes: Optional[int] = None,
                 temperature_step_minutes: int = 30) -> Tuple[DemandSeries, CovariateSeries]:
    """Load and validate demand, price and temperature tables

    A covariate with a single column is a citywide series and is broadcast to
    every area. Temperature on a coarser grid is linearly interpolated; price on
    a coarser grid is held between tariff changes.

    Returns:
        (DemandSeries, CovariateSeries) on a common grid
    """
    area_ids, times, values = read_table(demand_path, orientation)
    _check_grid(demand_path, times, step_minutes)
    bad = np.argwhere((values < 0.0) | (values > 1.0))
    if len(bad):
        offenders = [(int(t) + 1, area_ids[a], float(values[a, t])) for a, t in bad]
        unit = "row" if orientation == "time_by_area" else "time step"
        raise OccupancyRangeError(str(demand_path), offenders, unit=unit)
    demand = DemandSeries(values, area_ids, step_minutes, times[0])

    price = _align_covariate("price", price_path, orientation, price_step_minutes or step_minutes,
                             demand, interpolate=False)
    temperature = _align_covariate("temperature", temperature_path, orientation, temperature_step_minutes,
                                   demand, interpolate=True)
    cov = CovariateSeries(price, temperature, step_minutes, demand.start_time)
    logger.info(f"Loaded {demand.n_areas} areas x {demand.n_steps} steps from {demand_path}")
    return demand, cov


def load_from_descriptor(descriptor: DatasetDescriptor) -> Tuple[DemandSeries, CovariateSeries]:
    return load_dataset(
        descriptor.resolve("demand"),
        descriptor.resolve("price"),
        descriptor.resolve("temperature"),
        orientation=descriptor.orientation,
        step_minutes=descriptor.step_minutes,
        price_step_minutes=descriptor.price_step_minutes,
        temperature_step_minutes=descriptor.temperature_step_minutes,
    )


def write_series_csv(path: PathLike, values: np.ndarray, area_ids: Sequence[str],
                     start_time: pd.Timestamp, step_minutes: int) -> Path:
    """Write an [N x T] matrix as a time_by_area table that read_table reproduces exactly"""
    path = Path(path)
    times = pd.date_range(start_time, periods=values.shape[1], freq=pd.Timedelta(minutes=step_minutes))
    frame = pd.DataFrame(np.asarray(values).T, columns=list(area_ids))
    frame.insert(0, "time", times.strftime("%Y-%m-%dT%H:%M:%S"))
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def stack_features(batch: WindowBatch, features: Sequence[str]) -> np.ndarray:
    """Select input feature slices by name, keeping the canonical order"""
    idx = [FEATURE_ORDER.index(name) for name in features]
    return batch.inputs[..., idx]
