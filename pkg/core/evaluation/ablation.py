# Ablation matrix and hyperparameter grid

import logging
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from core.config import VARIANTS, ModelConfig, TrainConfig
from core.data.dataset import WindowBatch
from core.errors import UnknownVariantError
from core.evaluation.metrics import MetricReport, metrics, per_area_rmse
from core.model.network import CityChargeNet, init_model
from core.region.features import RegionStructure
from core.training.trainer import TrainHistory, predict, train

logger = logging.getLogger(__name__)


class SplitWindows(NamedTuple):
    train: WindowBatch
    val: WindowBatch
    test: WindowBatch


class FitResult(NamedTuple):
    model: CityChargeNet
    history: TrainHistory
    predictions: np.ndarray
    report: MetricReport


class AblationResult(NamedTuple):
    reports: Dict[str, MetricReport]
    histories: Dict[str, TrainHistory]
    per_area: pd.DataFrame


def check_variants(variants: Iterable[str]) -> List[str]:
    variants = list(variants)
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise UnknownVariantError(f"unknown variant(s) {', '.join(unknown)}. Must be one of: {', '.join(VARIANTS)}")
    return variants


def fit_and_score(model_config: ModelConfig, train_config: TrainConfig, windows: SplitWindows,
                  structure: RegionStructure, seed: int, step_minutes: int = 5) -> FitResult:
    """Initialize from seed, train to early stop and score the test windows"""
    model = init_model(model_config, seed)
    result = train(model, windows.train, windows.val, structure, train_config)
    pred = predict(result.model, windows.test, structure)
    report = metrics(pred, windows.test.targets, model_config.horizons, step_minutes)
    return FitResult(result.model, result.history, pred, report)


def run_ablation(variants: Sequence[str], windows: SplitWindows, structure: RegionStructure,
                 base_config: ModelConfig, train_config: TrainConfig, seed: int,
                 area_ids: Optional[Sequence[str]] = None, step_minutes: int = 5) -> AblationResult:
    """Train and score every variant from the same seed

    Args:
        variants: Variant ids, trained in the given order
        windows: Train/val/test windows
        structure: Region structure
        base_config: Architecture shared by all variants
        train_config: Optimization settings
        seed: Initialization seed of every variant
        area_ids: Area labels for the per-area table

    Returns:
        Reports and histories by variant, plus per-area RMSE deltas against full
        at the longest horizon
    """
    variants = check_variants(variants)
    reports, histories, per_area = {}, {}, {}
    for variant in variants:
        logger.info(f"Ablation: training variant {variant}")
        config = ModelConfig(**{**base_config.model_dump(), "variant": variant})
        fit = fit_and_score(config, train_config, windows, structure, seed, step_minutes)
        reports[variant] = fit.report
        histories[variant] = fit.history
        per_area[variant] = per_area_rmse(fit.predictions, windows.test.targets, -1)
        logger.info(f"Ablation: {variant} average RMSE {fit.report.average('rmse'):.6g}")

    return AblationResult(reports, histories, per_area_deltas(per_area, area_ids))


def per_area_deltas(per_area: Dict[str, np.ndarray], area_ids: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """RMSE change of every area when a variant replaces the full model"""
    columns = ["area_id", "variant", "rmse", "rmse_full", "delta"]
    if "full" not in per_area:
        logger.warning("full variant not in the ablation; per-area deltas skipped")
        return pd.DataFrame(columns=columns)
    full = per_area["full"]
    area_ids = list(area_ids) if area_ids is not None else [str(i) for i in range(len(full))]
    rows = []
    for variant, rmse in per_area.items():
        if variant == "full":
            continue
        for area, value, base in zip(area_ids, rmse, full):
            rows.append({"area_id": area, "variant": variant, "rmse": float(value),
                         "rmse_full": float(base), "delta": float(value - base)})
    return pd.DataFrame(rows, columns=columns)


def run_grid(encoder_blocks: Sequence[int], temperatures: Sequence[float], windows: SplitWindows,
             structure: RegionStructure, base_config: ModelConfig, train_config: TrainConfig,
             seed: int, step_minutes: int = 5) -> pd.DataFrame:
    """Average validation and test RMSE for every (encoder blocks, temperature) cell"""
    rows = []
    for blocks in encoder_blocks:
        for temperature in temperatures:
            config = ModelConfig(**{**base_config.model_dump(), "encoder_blocks": int(blocks),
                                    "temperature": float(temperature)})
            fit = fit_and_score(config, train_config, windows, structure, seed, step_minutes)
            val_pred = predict(fit.model, windows.val, structure)
            val_report = metrics(val_pred, windows.val.targets, config.horizons, step_minutes)
            rows.append({
                "encoder_blocks": int(blocks),
                "temperature": float(temperature),
                "val_rmse": val_report.average("rmse"),
                "test_rmse": fit.report.average("rmse"),
                "best_epoch": fit.history.best_epoch,
            })
            logger.info(f"Grid: encoder_blocks={blocks}, temperature={temperature}: test RMSE {rows[-1]['test_rmse']:.6g}")
    return pd.DataFrame(rows)
