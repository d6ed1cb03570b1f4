# Data commands: prepare and synth

import argparse
import logging

from cli.commands.common import add_run_flags, command, fail, read_descriptor
from cli.validators.run_validators import validate_dataset
from core.config import RunConfig
from core.data.dataset import chronological_split, load_from_descriptor, normalize_covariates, window_count
from core.data.synthetic import generate_synthetic
from core.errors import EmptyBatchError
from core.region.features import adjusted_rand, kmeans, tfidf
from core.storage.bundles import BundleStore, write_dataset

logger = logging.getLogger(__name__)


def cmd_prepare(config: RunConfig) -> int:
    """Validate, align, normalize and split the dataset into a prepared bundle"""
    descriptor = read_descriptor(config)
    validation = validate_dataset(config, descriptor)
    if validation.get("error"):
        return fail(validation["error"])

    demand, cov = load_from_descriptor(descriptor)
    split = chronological_split(demand.n_steps)
    scaled, norm = normalize_covariates(cov, split.train)

    model_config = config.model_config_for(descriptor)
    counts = {}
    for name, (start, stop) in split.ranges().items():
        counts[name] = window_count(stop - start, model_config.lookback, model_config.horizons)
        if counts[name] <= 0:
            raise EmptyBatchError(
                f"{name} split ({stop - start} steps) is too short for lookback {model_config.lookback} "
                f"and horizon {max(model_config.horizons)}"
            )

    BundleStore.save_prepared(config.out_dir, demand, scaled, split, norm)
    summary = BundleStore.read_json(config.out_dir / "summary.json")
    summary["windows"] = counts
    BundleStore.write_json(config.out_dir / "summary.json", summary)
    print(f"areas: {demand.n_areas}, steps: {demand.n_steps}, splits: {split.sizes()}, windows: {counts}")
    return 0


def cmd_synth(config: RunConfig) -> int:
    """Generate a synthetic dataset bundle with ground-truth groups

    Also re-clusters the generated POIs with as many clusters as groups and
    records how well that recovers the ground truth.
    """
    synth = config.synth_config()
    data = generate_synthetic(synth, config.seed)
    bundle_dir = config.out_dir / "dataset"
    descriptor = write_dataset(bundle_dir, data.demand, data.cov, data.poi, data.neighbor_pairs, data.labels)

    recovered = kmeans(tfidf(data.poi), synth.groups, seed=config.seed)
    ari = adjusted_rand(data.labels, recovered.labels)
    BundleStore.write_json(config.out_dir / "synth.json", {
        "descriptor": str(descriptor),
        "seed": config.seed,
        "areas": synth.n_areas,
        "steps": synth.t_steps,
        "groups": synth.groups,
        "recovered_ari": ari,
        "settings": synth.model_dump(mode="json"),
    })
    print(f"dataset: {descriptor}, recovered ARI: {ari:.4f}")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("prepare", help="Validate and split a dataset into a prepared bundle")
    add_run_flags(parser).set_defaults(handler=command(cmd_prepare))

    parser = subparsers.add_parser("synth", help="Generate a synthetic dataset bundle")
    add_run_flags(parser).set_defaults(handler=command(cmd_synth))
    logger.debug("Registered data commands")
