# Model commands: train, evaluate, ablate and tune

import argparse
import logging
from typing import Any, Dict, NamedTuple, Optional

import pandas as pd

from cli.commands.common import (
    BEST_CHECKPOINT,
    LAST_CHECKPOINT,
    add_run_flags,
    checkpoint_path,
    command,
    fail,
    read_descriptor,
)
from cli.validators.run_validators import validate_evaluate_request, validate_prepared, validate_structure
from core.config import ModelConfig, RunConfig, TrainConfig
from core.evaluation.ablation import SplitWindows, check_variants, run_ablation, run_grid
from core.evaluation.metrics import (
    metrics,
    metrics_document,
    metrics_frame,
    persistence_baseline,
    reference_check,
)
from core.model.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from core.model.network import init_model
from core.region.features import RegionStructure, connectivity_agreement, hyperedge_connectivity, pearson_matrix
from core.storage.bundles import BundleStore, PreparedBundle
from core.training.trainer import ResumeState, TrainHistory, predict, train

logger = logging.getLogger(__name__)


class ModelInputs(NamedTuple):
    bundle: PreparedBundle
    structure: RegionStructure
    model_config: ModelConfig
    windows: SplitWindows


def load_inputs(config: RunConfig, model_config: Optional[ModelConfig] = None) -> ModelInputs:
    """Prepared bundle, region structure and windows for the effective model config"""
    bundle = BundleStore.load_prepared(config.out_dir)
    structure = BundleStore.load_structure(config.out_dir, bundle.demand.area_ids)
    if model_config is None:
        model_config = config.model_config_for(read_descriptor(config))
    if model_config.clusters != structure.n_clusters:
        logger.warning(
            f"model config names {model_config.clusters} clusters, structure has {structure.n_clusters}; "
            "using the structure"
        )
    windows = SplitWindows(*(
        bundle.windows(name, model_config.lookback, model_config.horizons) for name in ("train", "val", "test")
    ))
    return ModelInputs(bundle, structure, model_config, windows)


def _check_stage_inputs(config: RunConfig) -> Dict[str, Any]:
    validation = validate_prepared(config.out_dir)
    if validation.get("error"):
        return validation
    return validate_structure(config.out_dir)


def _seed_lineage(config: RunConfig, train_config: TrainConfig) -> Dict[str, Any]:
    return {
        "run_seed": config.seed,
        "init_seed": config.seed,
        "train_seed": train_config.seed,
        "shuffle": "default_rng([train_seed, epoch])",
        "gumbel": "SeedSequence([train_seed, epoch, 1])",
        "dropout": "SeedSequence([train_seed, epoch, 2])",
    }


def cmd_train(config: RunConfig) -> int:
    """Train to early stop or max epochs, keeping best and last checkpoints"""
    validation = _check_stage_inputs(config)
    if validation.get("error"):
        return fail(validation["error"])

    inputs = load_inputs(config)
    train_config = config.train_config()
    best_path = checkpoint_path(config, BEST_CHECKPOINT)
    last_path = checkpoint_path(config, LAST_CHECKPOINT)
    header = {
        "seed_lineage": _seed_lineage(config, train_config),
        "train_config": train_config.model_dump(mode="json"),
    }

    model = init_model(inputs.model_config, config.seed)
    resume = None
    if config.resume and last_path.is_file():
        last = read_checkpoint(last_path, inputs.model_config)
        best = load_checkpoint(best_path, inputs.model_config)
        resume = ResumeState(
            last.model.state_dict(),
            last.optimizer_state,
            TrainHistory.from_dict(last.extra["history"]),
            best.state_dict(),
        )
    elif config.resume:
        logger.warning(f"--resume given but {last_path} does not exist; training from scratch")

    def on_epoch(epoch, model, optimizer, history, best_state):
        if history.best_epoch == epoch:
            save_checkpoint(model, best_path, epoch=epoch, history=history.to_dict(), **header)
        save_checkpoint(model, last_path, optimizer.state_dict(), epoch=epoch, history=history.to_dict(), **header)

    result = train(model, inputs.windows.train, inputs.windows.val, inputs.structure, train_config,
                   resume=resume, on_epoch=on_epoch)
    save_checkpoint(result.model, best_path, epoch=result.history.best_epoch,
                    history=result.history.to_dict(), **header)
    BundleStore.write_csv(config.out_dir / "history.csv", result.history.to_frame())
    print(
        f"epochs: {result.history.epochs}, best epoch: {result.history.best_epoch}, "
        f"best val loss: {result.history.best_val_loss:.6g}, stop: {result.history.stop_reason}"
    )
    return 0


def _correlation_outputs(config: RunConfig, inputs: ModelInputs) -> None:
    demand = inputs.bundle.demand
    corr, mask = pearson_matrix(demand, config.correlation_threshold)
    frame = pd.DataFrame(corr, columns=list(demand.area_ids))
    frame.insert(0, "area_id", list(demand.area_ids))
    BundleStore.write_csv(config.out_dir / "correlation.csv", frame)
    BundleStore.write_json(config.out_dir / "correlation.json", {
        "threshold": config.correlation_threshold,
        "strong_pairs": int((mask.sum() - mask.shape[0]) // 2),
        "agreement": connectivity_agreement(mask, hyperedge_connectivity(inputs.structure.incidence)),
    })


def cmd_evaluate(config: RunConfig) -> int:
    """Score the best checkpoint (or a predictions file) and the persistence baseline on the test split"""
    validation = _check_stage_inputs(config)
    if validation.get("error"):
        return fail(validation["error"])
    validation = validate_evaluate_request(config, config.out_dir)
    if validation.get("error"):
        return fail(validation["error"])

    if config.predictions_path:
        inputs = load_inputs(config)
        test = inputs.windows.test
        pred = BundleStore.load_predictions(config.predictions_path, test.targets.shape)
    else:
        model = load_checkpoint(checkpoint_path(config, BEST_CHECKPOINT))
        inputs = load_inputs(config, model.config)
        test = inputs.windows.test
        pred = predict(model, test, inputs.structure)
        BundleStore.save_predictions(config.out_dir / "predictions.npy", pred)

    step = inputs.bundle.demand.step_minutes
    horizons = inputs.model_config.horizons
    reports = {
        "model": metrics(pred, test.targets, horizons, step),
        "persistence": metrics(persistence_baseline(test), test.targets, horizons, step),
    }
    document = metrics_document(reports)
    document["reference"] = reference_check(reports["model"])
    BundleStore.write_json(config.out_dir / "metrics.json", document)
    BundleStore.write_csv(config.out_dir / "metrics.csv", metrics_frame(reports))
    _correlation_outputs(config, inputs)

    for name, report in reports.items():
        averages = report.scaled().averages
        print(f"{name}: RMSE {averages['rmse']:.4f}, MAE {averages['mae']:.4f} (x1e-2)")
    return 0


def cmd_ablate(config: RunConfig) -> int:
    """Train and score every configured variant from the same seed"""
    validation = _check_stage_inputs(config)
    if validation.get("error"):
        return fail(validation["error"])

    variants = check_variants(config.variants)
    inputs = load_inputs(config)
    result = run_ablation(
        variants, inputs.windows, inputs.structure, inputs.model_config, config.train_config(), config.seed,
        area_ids=inputs.bundle.demand.area_ids, step_minutes=inputs.bundle.demand.step_minutes,
    )

    out = config.out_dir / "ablation"
    BundleStore.write_json(out / "metrics.json", metrics_document(result.reports))
    BundleStore.write_csv(out / "metrics.csv", metrics_frame(result.reports))
    BundleStore.write_csv(out / "per_area.csv", result.per_area)
    for variant, history in result.histories.items():
        BundleStore.write_csv(out / f"history_{variant}.csv", history.to_frame())

    for variant, report in result.reports.items():
        print(f"{variant}: average RMSE {report.average('rmse'):.6g}")
    return 0


def cmd_tune(config: RunConfig) -> int:
    """Grid over encoder blocks and Gumbel temperature"""
    validation = _check_stage_inputs(config)
    if validation.get("error"):
        return fail(validation["error"])

    inputs = load_inputs(config)
    table = run_grid(
        config.tune.encoder_blocks, config.tune.temperature, inputs.windows, inputs.structure,
        inputs.model_config, config.train_config(), config.seed, inputs.bundle.demand.step_minutes,
    )
    BundleStore.write_csv(config.out_dir / "tuning.csv", table)
    best = table.loc[table["val_rmse"].idxmin()]
    print(f"best cell: encoder_blocks={int(best['encoder_blocks'])}, temperature={best['temperature']:g}")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    for name, cmd, text in (
        ("train", cmd_train, "Train the network"),
        ("evaluate", cmd_evaluate, "Score the best checkpoint on the test split"),
        ("ablate", cmd_ablate, "Run the ablation matrix"),
        ("tune", cmd_tune, "Grid over encoder blocks and Gumbel temperature"),
    ):
        parser = subparsers.add_parser(name, help=text)
        add_run_flags(parser).set_defaults(handler=command(cmd))
    logger.debug("Registered model commands")
