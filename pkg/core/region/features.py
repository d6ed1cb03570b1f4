# Region featurization: POI TF-IDF, K-means clustering, hypergraph and adjacency structures

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score

from core.data.dataset import DemandSeries
from core.errors import AreaReferenceError, ConfigError, DatasetParseError, DegenerateAreaError, StructureError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class PoiCorpus:
    """POI counts per area (rows) and category (columns)"""

    counts: np.ndarray
    category_names: Tuple[str, ...]
    area_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ConfigError(f"POI counts must be [areas x categories], got shape {counts.shape}")
        if np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0)):
            raise ConfigError("POI counts must be nonnegative integers")
        if len(self.category_names) != counts.shape[1]:
            raise ConfigError(f"{len(self.category_names)} category names for {counts.shape[1]} columns")
        area_ids = tuple(self.area_ids) or tuple(str(i) for i in range(counts.shape[0]))
        if len(area_ids) != counts.shape[0]:
            raise ConfigError(f"{len(area_ids)} area ids for {counts.shape[0]} POI rows")
        counts = counts.astype(np.int64)
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "category_names", tuple(self.category_names))
        object.__setattr__(self, "area_ids", area_ids)

    @property
    def n_areas(self) -> int:
        return self.counts.shape[0]

    def with_pseudo_counts(self) -> "PoiCorpus":
        """One pseudo-count per category for areas without any POI"""
        counts = self.counts.copy()
        empty = counts.sum(axis=1) == 0
        counts[empty] += 1
        return PoiCorpus(counts, self.category_names, self.area_ids)


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    inertia: float
    centroids: np.ndarray


@dataclass(frozen=True)
class RegionStructure:
    """Hypergraph incidence M [N x C], symmetric adjacency [N x N] and cluster labels"""

    incidence: np.ndarray
    adjacency: np.ndarray
    labels: np.ndarray

    @property
    def n_areas(self) -> int:
        return self.incidence.shape[0]

    @property
    def n_clusters(self) -> int:
        return self.incidence.shape[1]

    @property
    def isolated(self) -> np.ndarray:
        """Areas without any neighbor; graph attention gives them a self-connection"""
        return self.adjacency.sum(axis=1) == 0

    def permuted(self, order: Sequence[int]) -> "RegionStructure":
        order = np.asarray(order)
        return RegionStructure(
            self.incidence[order],
            self.adjacency[np.ix_(order, order)],
            self.labels[order],
        )


def tfidf(corpus: PoiCorpus) -> np.ndarray:
    """POI importance per area

    u[j, i] = (f[j, i] / sum_k f[j, k]) * ln(N / (1 + df_i)), where df_i is the
    number of areas with a positive count of category i. Ubiquitous categories
    get a negative idf and are kept as such.

    Returns:
        TF-IDF matrix [N_areas x K_categories]
    """
    counts = corpus.counts.astype(np.float64)
    totals = counts.sum(axis=1)
    empty = np.flatnonzero(totals == 0)
    if len(empty):
        raise DegenerateAreaError([corpus.area_ids[j] for j in empty])

    tf = counts / totals[:, None]
    df = (counts > 0).sum(axis=0)
    idf = np.log(corpus.n_areas / (1.0 + df))
    return tf * idf[None, :]


def kmeans(u: np.ndarray, n_clusters: int, seed: int = 0, n_init: int = 10,
           max_iter: int = 300, tol: float = 1e-6) -> KMeansResult:
    """Partition areas by their TF-IDF rows

    Lloyd iterations with k-means++ seeding, n_init restarts keeping the lowest
    inertia. Empty clusters are reseeded from the farthest points.

    Raises:
        StructureError: when the rows hold fewer than n_clusters distinct points,
            so some hyperedge would stay empty
    """
    u = np.asarray(u, dtype=np.float64)
    if n_clusters < 1 or n_clusters > u.shape[0]:
        raise ConfigError(f"cluster count must be in [1, {u.shape[0]}], got {n_clusters}")
    model = KMeans(
        n_clusters=n_clusters,
        init="k-means++",
        n_init=n_init,
        max_iter=max_iter,
        tol=tol,
        algorithm="lloyd",
        random_state=seed,
    )
    labels = model.fit_predict(u)
    labels = _canonical_labels(labels)
    found = int(labels.max()) + 1
    if found < n_clusters:
        distinct = len(np.unique(u, axis=0))
        raise StructureError(
            f"only {found} non-empty clusters for C={n_clusters}: the TF-IDF matrix has {distinct} distinct rows"
        )
    centroids = np.stack([u[labels == c].mean(axis=0) for c in range(found)])
    inertia = float(((u - centroids[labels]) ** 2).sum())
    return KMeansResult(labels, inertia, centroids)


def _canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber clusters by first appearance so equal partitions get equal labels"""
    mapping: Dict[int, int] = {}
    for label in labels:
        mapping.setdefault(int(label), len(mapping))
    return np.array([mapping[int(label)] for label in labels], dtype=np.int64)


def partition_inertia(u: np.ndarray, labels: np.ndarray) -> float:
    """Within-cluster squared distance of an arbitrary partition"""
    total = 0.0
    for c in np.unique(labels):
        members = u[labels == c]
        total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def build_structure(labels: Sequence[int], neighbor_pairs: Iterable[Tuple[int, int]],
                    n_clusters: Optional[int] = None) -> RegionStructure:
    """Incidence from cluster labels and symmetric adjacency from neighbor pairs"""
    labels = np.asarray(labels, dtype=np.int64)
    n_areas = len(labels)
    n_clusters = n_clusters or int(labels.max()) + 1
    if labels.min() < 0 or labels.max() >= n_clusters:
        raise StructureError(f"labels must lie in [0, {n_clusters})")

    incidence = np.zeros((n_areas, n_clusters), dtype=np.float64)
    incidence[np.arange(n_areas), labels] = 1.0
    empty = np.flatnonzero(incidence.sum(axis=0) == 0)
    if len(empty):
        raise StructureError(f"empty hyperedge(s): {empty.tolist()}")

    adjacency = np.zeros((n_areas, n_areas), dtype=np.float64)
    for a, b in neighbor_pairs:
        if not (0 <= a < n_areas and 0 <= b < n_areas):
            raise AreaReferenceError(f"neighbor pair ({a}, {b}) references an unknown area")
        if a != b:
            adjacency[a, b] = adjacency[b, a] = 1.0

    structure = RegionStructure(incidence, adjacency, labels)
    isolated = np.flatnonzero(structure.isolated)
    if len(isolated):
        logger.warning(f"{len(isolated)} isolated area(s) will attend to themselves: {isolated.tolist()[:10]}")
    return structure


def pearson_matrix(demand: DemandSeries, threshold: float = 0.4) -> Tuple[np.ndarray, np.ndarray]:
    """Pairwise Pearson correlation of area occupancies and its threshold mask

    Zero-variance areas correlate 0 with every other area (1 with themselves).
    """
    values = demand.values
    if values.shape[1] < 2:
        raise ConfigError("Pearson correlation needs at least 2 steps")
    centered = values - values.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered ** 2).sum(axis=1))
    flat = norms == 0
    if flat.any():
        logger.warning(f"{int(flat.sum())} zero-variance area(s) get correlation 0")
    safe = np.where(flat, 1.0, norms)
    unit = centered / safe[:, None]
    corr = np.clip(unit @ unit.T, -1.0, 1.0)
    corr[flat, :] = 0.0
    corr[:, flat] = 0.0
    corr = (corr + corr.T) / 2.0
    np.fill_diagonal(corr, 1.0)
    mask = (corr >= threshold).astype(np.int64)
    return corr, mask


def hyperedge_connectivity(incidence: np.ndarray) -> np.ndarray:
    """1 where two areas share a hyperedge"""
    return ((incidence @ incidence.T) > 0).astype(np.int64)


def connectivity_agreement(mask: np.ndarray, connectivity: np.ndarray) -> Dict[str, Optional[float]]:
    """Compare hyperedge connectivity with the strong-correlation mask over off-diagonal pairs"""
    off = ~np.eye(mask.shape[0], dtype=bool)
    strong = mask.astype(bool) & off
    linked = connectivity.astype(bool) & off
    both = int((strong & linked).sum())
    either = int((strong | linked).sum())
    n_linked, n_strong = int(linked.sum()), int(strong.sum())
    return {
        "precision": both / n_linked if n_linked else None,
        "recall": both / n_strong if n_strong else None,
        "jaccard": both / either if either else None,
    }


def adjusted_rand(labels_a: Sequence[int], labels_b: Sequence[int]) -> float:
    return float(adjusted_rand_score(labels_a, labels_b))


def read_poi_csv(path: PathLike) -> PoiCorpus:
    """Read `area_id,<category_1>,...` integer counts"""
    path = Path(path)
    if not path.is_file():
        raise DatasetParseError(str(path), None, None, "file does not exist")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    counts = frame.iloc[:, 1:].apply(pd.to_numeric, errors="coerce")
    bad = counts.isna().to_numpy() | (counts.to_numpy() % 1 != 0)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DatasetParseError(str(path), int(r) + 1, str(frame.columns[c + 1]), "expected an integer count")
    return PoiCorpus(
        counts.to_numpy().astype(np.int64),
        tuple(frame.columns[1:]),
        tuple(frame.iloc[:, 0].astype(str).str.strip()),
    )


def write_poi_csv(path: PathLike, corpus: PoiCorpus) -> Path:
    frame = pd.DataFrame(corpus.counts, columns=list(corpus.category_names))
    frame.insert(0, "area_id", list(corpus.area_ids))
    frame.to_csv(path, index=False)
    return Path(path)


def read_adjacency(path: PathLike, area_ids: Sequence[str]) -> List[Tuple[int, int]]:
    """Read `area_a area_b` lines into index pairs"""
    path = Path(path)
    if not path.is_file():
        raise DatasetParseError(str(path), None, None, "file does not exist")
    index = {a: i for i, a in enumerate(area_ids)}
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise DatasetParseError(str(path), lineno, None, f"expected two area ids, got '{line}'")
        unknown = [p for p in parts if p not in index]
        if unknown:
            raise AreaReferenceError(f"{path}: line {lineno} references unknown area '{unknown[0]}'")
        pairs.append((index[parts[0]], index[parts[1]]))
    return pairs


def write_adjacency(path: PathLike, pairs: Iterable[Tuple[int, int]], area_ids: Sequence[str]) -> Path:
    lines = [f"{area_ids[a]} {area_ids[b]}" for a, b in pairs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)


def clusters_document(corpus: PoiCorpus, u: np.ndarray, result: KMeansResult) -> Dict[str, Any]:
    """Content of clusters.json: label map plus the TF-IDF matrix for inspection"""
    return {
        "n_clusters": int(result.labels.max()) + 1,
        "inertia": result.inertia,
        "labels": {area: int(label) for area, label in zip(corpus.area_ids, result.labels)},
        "categories": list(corpus.category_names),
        "tfidf": {area: [float(x) for x in row] for area, row in zip(corpus.area_ids, u)},
    }


def labels_from_document(document: Dict[str, Any], area_ids: Sequence[str]) -> np.ndarray:
    labels = document["labels"]
    missing = [a for a in area_ids if a not in labels]
    if missing:
        raise AreaReferenceError(f"cluster labels missing for areas {', '.join(missing[:5])}")
    return np.array([labels[a] for a in area_ids], dtype=np.int64)


def read_clusters(path: PathLike) -> Dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))
