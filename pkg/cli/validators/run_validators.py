# Validators for pipeline commands

import os
import re
from pathlib import Path
from typing import Any, Dict, Optional

from core.config import DatasetDescriptor, RunConfig

SWEEP_PATTERN = re.compile(r"^\s*(\d+)\s*\.\.\s*(\d+)\s*$")


def validate_dataset(config: RunConfig, descriptor: Optional[DatasetDescriptor]) -> Dict[str, Any]:
    """Dataset descriptor given and every file it names present"""
    if not config.dataset:
        return {"error": "dataset is required (set `dataset` in the run config)"}

    if descriptor is None:
        return {"error": f"dataset descriptor {config.dataset} could not be read"}

    for name in ("demand", "price", "temperature"):
        path = descriptor.resolve(name)
        if not os.path.isfile(path):
            return {"error": f"{name} file does not exist: {path}"}

    for name in ("poi", "adjacency", "labels"):
        path = descriptor.resolve(name)
        if path is not None and not os.path.isfile(path):
            return {"error": f"{name} file does not exist: {path}"}

    return {}


def validate_prepared(out_dir: Path) -> Dict[str, Any]:
    if not (out_dir / "prepared.npz").is_file():
        return {"error": f"no prepared bundle in {out_dir}. Run `prepare` first"}
    return {}


def validate_cluster_request(config: RunConfig, descriptor: Optional[DatasetDescriptor], n_areas: int) -> Dict[str, Any]:
    if descriptor is None or descriptor.poi is None:
        return {"error": "the dataset descriptor names no `poi` file"}

    poi = descriptor.resolve("poi")
    if not os.path.isfile(poi):
        return {"error": f"poi file does not exist: {poi}"}

    if config.clusters > n_areas:
        return {"error": f"clusters ({config.clusters}) cannot exceed the number of areas ({n_areas})"}

    if config.sweep is not None:
        sweep = validate_sweep(config.sweep)
        if sweep.get("error"):
            return sweep
        if sweep["hi"] > n_areas:
            return {"error": f"sweep upper bound {sweep['hi']} exceeds the number of areas ({n_areas})"}

    return {}


def validate_sweep(text: str) -> Dict[str, Any]:
    """Parse `lo..hi`; returns {"lo", "hi"} or {"error"}"""
    match = SWEEP_PATTERN.match(text or "")
    if not match:
        return {"error": f"sweep must look like lo..hi, got '{text}'"}

    lo, hi = int(match.group(1)), int(match.group(2))
    if lo < 1 or hi < lo:
        return {"error": f"sweep bounds must satisfy 1 <= lo <= hi, got {lo}..{hi}"}

    return {"lo": lo, "hi": hi}


def validate_structure(out_dir: Path) -> Dict[str, Any]:
    if not (out_dir / "structure.npz").is_file():
        return {"error": f"no region structure in {out_dir}. Run `cluster` first"}
    return {}


def validate_evaluate_request(config: RunConfig, out_dir: Path) -> Dict[str, Any]:
    if config.predictions_path:
        if not os.path.isfile(config.predictions_path):
            return {"error": f"predictions file does not exist: {config.predictions_path}"}
        return {}

    checkpoint = out_dir / "checkpoints" / "best.ckpt"
    if not checkpoint.is_file():
        return {"error": f"checkpoint does not exist: {checkpoint}. Run `train` first"}

    return {}
