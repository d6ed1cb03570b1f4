# Forecast metrics per horizon

import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.data.dataset import WindowBatch
from core.errors import InsufficientDataError, ShapeError

logger = logging.getLogger(__name__)

METRIC_NAMES = ("rmse", "mae", "rae", "r2")
REFERENCE_RMSE = 0.0451
REFERENCE_TOLERANCE = 0.15
DISPLAY_FACTOR = 100.0


@dataclass(frozen=True)
class HorizonMetrics:
    """RAE and R2 are None when the targets of the horizon have zero variance"""

    rmse: float
    mae: float
    rae: Optional[float]
    r2: Optional[float]
    samples: int

    def get(self, name: str) -> Optional[float]:
        return getattr(self, name)


@dataclass(frozen=True)
class MetricReport:
    horizons: Tuple[int, ...]
    per_horizon: Tuple[HorizonMetrics, ...]
    step_minutes: int = 5

    def average(self, name: str) -> Optional[float]:
        values = [m.get(name) for m in self.per_horizon]
        if any(v is None for v in values):
            return None
        return float(np.mean(values))

    @property
    def averages(self) -> Dict[str, Optional[float]]:
        return {name: self.average(name) for name in METRIC_NAMES}

    def minutes(self, horizon: int) -> int:
        return horizon * self.step_minutes

    def scaled(self, factor: float = DISPLAY_FACTOR) -> "MetricReport":
        """Error magnitudes (RMSE, MAE) multiplied by factor for display; RAE and R2 are unitless"""
        return replace(self, per_horizon=tuple(
            replace(m, rmse=m.rmse * factor, mae=m.mae * factor) for m in self.per_horizon
        ))

    def to_dict(self) -> Dict[str, Any]:
        document: Dict[str, Any] = {}
        for h, m in zip(self.horizons, self.per_horizon):
            document[f"{self.minutes(h)}min"] = {
                "horizon_steps": h, "rmse": m.rmse, "mae": m.mae, "rae": m.rae, "r2": m.r2, "samples": m.samples,
            }
        document["average"] = self.averages
        return document

    def to_rows(self, variant: str) -> List[Dict[str, Any]]:
        display = self.scaled()
        rows = []
        for h, m, d in zip(self.horizons, self.per_horizon, display.per_horizon):
            for name in METRIC_NAMES:
                rows.append({
                    "variant": variant, "horizon": h, "minutes": self.minutes(h), "metric": name,
                    "value": m.get(name), "display": d.get(name),
                })
        for name in METRIC_NAMES:
            avg, shown = self.average(name), display.average(name)
            rows.append({
                "variant": variant, "horizon": "average", "minutes": None, "metric": name,
                "value": avg, "display": shown,
            })
        return rows


def _horizon_metrics(pred: np.ndarray, target: np.ndarray) -> HorizonMetrics:
    error = target - pred
    deviation = target - target.mean()
    ss_tot = float(np.sum(deviation ** 2))
    abs_tot = float(np.sum(np.abs(deviation)))
    rmse = math.sqrt(float(np.mean(error ** 2)))
    mae = float(np.mean(np.abs(error)))
    if ss_tot == 0.0:
        return HorizonMetrics(rmse, mae, None, None, target.size)
    rae = float(np.sum(np.abs(error))) / abs_tot
    r2 = 1.0 - float(np.sum(error ** 2)) / ss_tot
    return HorizonMetrics(rmse, mae, rae, r2, target.size)


def metrics(pred: np.ndarray, target: np.ndarray, horizons: Optional[Sequence[int]] = None,
            step_minutes: int = 5) -> MetricReport:
    """RMSE, MAE, RAE and R2 per horizon, pooled over every (sample, area) pair

    Args:
        pred: [S x N x H] predictions
        target: [S x N x H] observed occupancy
        horizons: Step offsets of the H outputs (defaults to 1..H)
        step_minutes: Grid step used to label horizons in minutes

    Returns:
        MetricReport
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 3:
        raise ShapeError(f"predictions {pred.shape} and targets {target.shape} must be equal [S x N x H] arrays")
    if pred.shape[0] * pred.shape[1] < 2:
        raise InsufficientDataError("metrics need at least two (sample, area) pairs per horizon")
    horizons = tuple(horizons) if horizons is not None else tuple(range(1, pred.shape[2] + 1))
    if len(horizons) != pred.shape[2]:
        raise ShapeError(f"{len(horizons)} horizon labels for {pred.shape[2]} outputs")

    per_horizon = tuple(_horizon_metrics(pred[..., k].ravel(), target[..., k].ravel()) for k in range(len(horizons)))
    flat = [h for h, m in zip(horizons, per_horizon) if m.r2 is None]
    if flat:
        logger.warning(f"targets have zero variance at horizon(s) {flat}; RAE and R2 reported as null")
    return MetricReport(horizons, per_horizon, step_minutes)


def persistence_baseline(batch: WindowBatch) -> np.ndarray:
    """Last observed demand of each window, repeated for every horizon"""
    last = np.asarray(batch.inputs)[:, :, -1, 0]
    return np.repeat(last[..., None], len(batch.horizon_offsets), axis=-1)


def per_area_rmse(pred: np.ndarray, target: np.ndarray, horizon_index: int = -1) -> np.ndarray:
    """RMSE of every area over the sample axis at one horizon, shape [N]"""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"predictions {pred.shape} and targets {target.shape} differ")
    error = target[..., horizon_index] - pred[..., horizon_index]
    return np.sqrt(np.mean(error ** 2, axis=0))


def reference_check(report: MetricReport, reference: float = REFERENCE_RMSE,
                    tolerance: float = REFERENCE_TOLERANCE) -> Dict[str, Any]:
    """Whether the average RMSE lies within a relative tolerance of a published value"""
    observed = report.average("rmse")
    relative = abs(observed - reference) / reference
    return {
        "reference_rmse": reference,
        "observed_rmse": observed,
        "relative_error": relative,
        "tolerance": tolerance,
        "met": bool(relative <= tolerance),
    }


def metrics_frame(reports: Dict[str, MetricReport]) -> pd.DataFrame:
    """Flat table: one row per variant x horizon x metric"""
    rows = []
    for variant, report in reports.items():
        rows.extend(report.to_rows(variant))
    return pd.DataFrame(rows, columns=["variant", "horizon", "minutes", "metric", "value", "display"])


def metrics_document(reports: Dict[str, MetricReport]) -> Dict[str, Any]:
    return {variant: report.to_dict() for variant, report in reports.items()}
