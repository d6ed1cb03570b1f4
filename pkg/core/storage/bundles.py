# On-disk bundles shared between pipeline stages

import io
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.data.dataset import (
    CovariateSeries,
    DemandSeries,
    NormStats,
    SplitIndex,
    WindowBatch,
    make_windows,
    write_series_csv,
)
from core.errors import CheckpointError, InputError
from core.region.features import PoiCorpus, RegionStructure, write_adjacency, write_poi_csv

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PREPARED_FILE = "prepared.npz"
SUMMARY_FILE = "summary.json"
STRUCTURE_FILE = "structure.npz"
DESCRIPTOR_FILE = "dataset.toml"


@dataclass(frozen=True)
class PreparedBundle:
    """Validated demand, normalized covariates and the chronological split"""

    demand: DemandSeries
    cov: CovariateSeries
    split: SplitIndex
    norm: NormStats

    def windows(self, split_name: str, lookback: int, horizons: Sequence[int]) -> WindowBatch:
        return make_windows(self.demand, self.cov, self.split.ranges()[split_name], lookback, horizons)


class BundleStore:
    """Reads and writes the artifacts passed between commands"""

    @staticmethod
    def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
        """Write to a temporary sibling, then rename over the target"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(data)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    @staticmethod
    def write_json(path: PathLike, document: Any) -> Path:
        text = json.dumps(document, indent=2, sort_keys=True, allow_nan=False)
        return BundleStore.atomic_write_bytes(path, (text + "\n").encode("utf-8"))

    @staticmethod
    def read_json(path: PathLike) -> Any:
        path = Path(path)
        if not path.is_file():
            raise InputError(f"missing artifact: {path}")
        return json.loads(path.read_text(encoding="utf-8"))

    @staticmethod
    def write_csv(path: PathLike, frame: pd.DataFrame) -> Path:
        text = frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")
        return BundleStore.atomic_write_bytes(path, text.encode("utf-8"))

    @staticmethod
    def save_prepared(out_dir: PathLike, demand: DemandSeries, cov: CovariateSeries,
                      split: SplitIndex, norm: NormStats) -> Path:
        """Write prepared.npz plus a human-readable summary.json"""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / PREPARED_FILE
        fd, tmp = tempfile.mkstemp(prefix=".prepared.", suffix=".npz", dir=out_dir)
        os.close(fd)
        try:
            np.savez(
                tmp,
                demand=np.asarray(demand.values),
                price=np.asarray(cov.price),
                temperature=np.asarray(cov.temperature),
                area_ids=np.array(demand.area_ids, dtype=str),
                step_minutes=np.int64(demand.step_minutes),
                start_time=np.array(demand.start_time.isoformat()),
                split=np.array([split.train, split.val, split.test], dtype=np.int64),
            )
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

        summary = {
            "areas": demand.n_areas,
            "steps": demand.n_steps,
            "step_minutes": demand.step_minutes,
            "start_time": demand.start_time.isoformat(),
            "split_sizes": split.sizes(),
            "split_ranges": {k: list(v) for k, v in split.ranges().items()},
            "normalization": norm.to_dict(),
        }
        BundleStore.write_json(out_dir / SUMMARY_FILE, summary)
        logger.info(f"Prepared bundle written to {out_dir}: {demand.n_areas} areas, splits {split.sizes()}")
        return path

    @staticmethod
    def load_prepared(out_dir: PathLike) -> PreparedBundle:
        out_dir = Path(out_dir)
        path = out_dir / PREPARED_FILE
        if not path.is_file():
            raise InputError(f"missing prepared bundle: {path} (run `prepare` first)")
        with np.load(path, allow_pickle=False) as data:
            area_ids = tuple(str(a) for a in data["area_ids"])
            start = pd.Timestamp(str(data["start_time"]))
            step = int(data["step_minutes"])
            demand = DemandSeries(data["demand"], area_ids, step, start)
            cov = CovariateSeries(data["price"], data["temperature"], step, start)
            ranges = [tuple(int(x) for x in row) for row in data["split"]]
        summary = BundleStore.read_json(out_dir / SUMMARY_FILE)
        return PreparedBundle(demand, cov, SplitIndex(*ranges), NormStats.from_dict(summary["normalization"]))

    @staticmethod
    def save_structure(out_dir: PathLike, structure: RegionStructure, area_ids: Sequence[str]) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / STRUCTURE_FILE
        fd, tmp = tempfile.mkstemp(prefix=".structure.", suffix=".npz", dir=out_dir)
        os.close(fd)
        try:
            np.savez(
                tmp,
                incidence=structure.incidence,
                adjacency=structure.adjacency,
                labels=structure.labels,
                area_ids=np.array(list(area_ids), dtype=str),
            )
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    @staticmethod
    def load_structure(out_dir: PathLike, area_ids: Optional[Sequence[str]] = None) -> RegionStructure:
        path = Path(out_dir) / STRUCTURE_FILE
        if not path.is_file():
            raise InputError(f"missing region structure: {path} (run `cluster` first)")
        with np.load(path, allow_pickle=False) as data:
            stored_ids = tuple(str(a) for a in data["area_ids"])
            structure = RegionStructure(data["incidence"], data["adjacency"], data["labels"])
        if area_ids is not None and tuple(area_ids) != stored_ids:
            raise InputError(f"{path}: structure areas do not match the prepared bundle")
        return structure

    @staticmethod
    def save_predictions(path: PathLike, predictions: np.ndarray) -> Path:
        buffer = io.BytesIO()
        np.save(buffer, np.asarray(predictions, dtype=np.float64), allow_pickle=False)
        return BundleStore.atomic_write_bytes(path, buffer.getvalue())

    @staticmethod
    def load_predictions(path: PathLike, shape: Tuple[int, ...]) -> np.ndarray:
        path = Path(path)
        if not path.is_file():
            raise InputError(f"missing predictions file: {path}")
        predictions = np.load(path, allow_pickle=False)
        if predictions.shape != tuple(shape):
            raise InputError(f"{path}: predictions have shape {predictions.shape}, expected {tuple(shape)}")
        return predictions.astype(np.float64)

    @staticmethod
    def require_checkpoint(path: PathLike) -> Path:
        path = Path(path)
        if not path.is_file():
            raise CheckpointError(f"missing checkpoint: {path} (run `train` first)")
        return path


def write_dataset(bundle_dir: PathLike, demand: DemandSeries, cov: CovariateSeries, poi: PoiCorpus,
                  neighbor_pairs: Sequence[Tuple[int, int]], labels: Optional[np.ndarray] = None) -> Path:
    """Write a dataset bundle in the input layout that load_from_descriptor reads back

    Returns:
        Path to the written dataset.toml descriptor
    """
    bundle_dir = Path(bundle_dir)
    bundle_dir.mkdir(parents=True, exist_ok=True)
    start, step = demand.start_time, demand.step_minutes
    write_series_csv(bundle_dir / "demand.csv", demand.values, demand.area_ids, start, step)
    write_series_csv(bundle_dir / "price.csv", cov.price, demand.area_ids, start, cov.step_minutes)
    write_series_csv(bundle_dir / "temperature.csv", cov.temperature, demand.area_ids, start, cov.step_minutes)
    write_poi_csv(bundle_dir / "poi.csv", poi)
    write_adjacency(bundle_dir / "adjacency.txt", neighbor_pairs, demand.area_ids)

    lines = [
        'demand = "demand.csv"',
        'price = "price.csv"',
        'temperature = "temperature.csv"',
        'poi = "poi.csv"',
        'adjacency = "adjacency.txt"',
        'orientation = "time_by_area"',
        f"step_minutes = {step}",
        f"price_step_minutes = {cov.step_minutes}",
        f"temperature_step_minutes = {cov.step_minutes}",
    ]
    if labels is not None:
        document = {"labels": {a: int(g) for a, g in zip(demand.area_ids, labels)}}
        BundleStore.write_json(bundle_dir / "labels.json", document)
        lines.insert(5, 'labels = "labels.json"')
    descriptor = bundle_dir / DESCRIPTOR_FILE
    BundleStore.atomic_write_bytes(descriptor, ("\n".join(lines) + "\n").encode("utf-8"))
    logger.info(f"Dataset bundle written to {bundle_dir}")
    return descriptor
