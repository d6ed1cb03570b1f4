# Region commands: cluster

import argparse
import logging
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from cli.commands.common import add_run_flags, command, fail, read_descriptor
from cli.validators.run_validators import validate_cluster_request, validate_prepared, validate_sweep
from core.config import RunConfig
from core.errors import AreaReferenceError
from core.region.features import (
    PoiCorpus,
    adjusted_rand,
    build_structure,
    clusters_document,
    connectivity_agreement,
    hyperedge_connectivity,
    kmeans,
    labels_from_document,
    pearson_matrix,
    read_adjacency,
    read_clusters,
    read_poi_csv,
    tfidf,
)
from core.storage.bundles import BundleStore

logger = logging.getLogger(__name__)


def align_corpus(corpus: PoiCorpus, area_ids: Sequence[str]) -> PoiCorpus:
    """Reorder POI rows to the demand area order"""
    index = {a: i for i, a in enumerate(corpus.area_ids)}
    missing = [a for a in area_ids if a not in index]
    if missing:
        raise AreaReferenceError(f"POI counts missing for areas {', '.join(missing[:5])}")
    order = [index[a] for a in area_ids]
    return PoiCorpus(corpus.counts[order], corpus.category_names, tuple(area_ids))


def _labelled_frame(matrix: np.ndarray, area_ids: Sequence[str], columns: Sequence[str]) -> pd.DataFrame:
    frame = pd.DataFrame(matrix, columns=list(columns))
    frame.insert(0, "area_id", list(area_ids))
    return frame


def _partition_summary(labels: np.ndarray, mask: np.ndarray, truth: Optional[np.ndarray]) -> Dict[str, Any]:
    incidence = np.eye(int(labels.max()) + 1)[labels]
    structure_links = hyperedge_connectivity(incidence)
    summary: Dict[str, Any] = {"agreement": connectivity_agreement(mask, structure_links)}
    if truth is not None:
        summary["ari"] = adjusted_rand(truth, labels)
    return summary


def cmd_cluster(config: RunConfig) -> int:
    """TF-IDF + K-means over POIs, then hypergraph and adjacency structures"""
    out = config.out_dir
    validation = validate_prepared(out)
    if validation.get("error"):
        return fail(validation["error"])

    bundle = BundleStore.load_prepared(out)
    area_ids = bundle.demand.area_ids
    descriptor = read_descriptor(config)
    validation = validate_cluster_request(config, descriptor, bundle.demand.n_areas)
    if validation.get("error"):
        return fail(validation["error"])

    corpus = align_corpus(read_poi_csv(descriptor.resolve("poi")), area_ids)
    u = tfidf(corpus)
    if descriptor.adjacency:
        pairs = read_adjacency(descriptor.resolve("adjacency"), area_ids)
    else:
        logger.warning("no adjacency file in the descriptor; every area is isolated")
        pairs = []
    truth = None
    if descriptor.labels:
        truth = labels_from_document(read_clusters(descriptor.resolve("labels")), area_ids)
    _, mask = pearson_matrix(bundle.demand, config.correlation_threshold)

    result = kmeans(u, config.clusters, seed=config.seed)
    structure = build_structure(result.labels, pairs)
    BundleStore.save_structure(out, structure, area_ids)
    BundleStore.write_csv(out / "tfidf.csv", _labelled_frame(u, area_ids, corpus.category_names))
    BundleStore.write_csv(
        out / "incidence.csv",
        _labelled_frame(structure.incidence, area_ids, [f"cluster_{c}" for c in range(structure.n_clusters)]),
    )
    BundleStore.write_csv(out / "adjacency.csv", _labelled_frame(structure.adjacency, area_ids, area_ids))

    document = clusters_document(corpus, u, result)
    document.update(_partition_summary(result.labels, mask, truth))
    BundleStore.write_json(out / "clusters.json", document)
    BundleStore.write_json(out / "correlation.json", {
        "threshold": config.correlation_threshold,
        "strong_pairs": int((mask.sum() - mask.shape[0]) // 2),
        "agreement": document["agreement"],
    })
    logger.info(f"Clustered {len(area_ids)} areas into {structure.n_clusters} hyperedges")

    if config.sweep is not None:
        sweep = validate_sweep(config.sweep)
        rows = []
        for k in range(sweep["lo"], sweep["hi"] + 1):
            trial = kmeans(u, k, seed=config.seed)
            summary = _partition_summary(trial.labels, mask, truth)
            sweep_document = clusters_document(corpus, u, trial)
            sweep_document.update(summary)
            BundleStore.write_json(out / f"labels_C{k}.json", sweep_document)
            rows.append({
                "clusters": k,
                "found": int(trial.labels.max()) + 1,
                "inertia": trial.inertia,
                "precision": summary["agreement"]["precision"],
                "recall": summary["agreement"]["recall"],
                "jaccard": summary["agreement"]["jaccard"],
                "ari": summary.get("ari"),
            })
        BundleStore.write_csv(out / "sweep.csv", pd.DataFrame(rows))
        logger.info(f"Cluster sweep {sweep['lo']}..{sweep['hi']} written to {out / 'sweep.csv'}")

    print(f"clusters: {structure.n_clusters}, sizes: {np.bincount(structure.labels).tolist()}")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("cluster", help="Cluster areas by POI TF-IDF and build region structures")
    add_run_flags(parser).set_defaults(handler=command(cmd_cluster))
    logger.debug("Registered region commands")
