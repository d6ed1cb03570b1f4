# Small synthetic problems shared by the training and evaluation tests

from typing import NamedTuple

from core.config import SynthConfig
from core.data.dataset import chronological_split, make_windows, normalize_covariates
from core.data.synthetic import generate_synthetic
from core.evaluation.ablation import SplitWindows
from core.region.features import RegionStructure, build_structure, kmeans, tfidf


class SyntheticCase(NamedTuple):
    windows: SplitWindows
    structure: RegionStructure
    step_minutes: int


def synthetic_case(n_areas: int = 6, groups: int = 2, t_steps: int = 480, seed: int = 0,
                   noise: float = 0.02, lookback: int = 12, horizons=(3, 6, 9, 12)) -> SyntheticCase:
    data = generate_synthetic(
        SynthConfig(n_areas=n_areas, groups=groups, t_steps=t_steps, noise=noise, lookback=lookback), seed=seed
    )
    split = chronological_split(data.demand.n_steps)
    cov, _ = normalize_covariates(data.cov, split.train)
    windows = SplitWindows(*(
        make_windows(data.demand, cov, split.ranges()[name], lookback, horizons)
        for name in ("train", "val", "test")
    ))
    labels = kmeans(tfidf(data.poi), groups, seed=seed).labels
    return SyntheticCase(windows, build_structure(labels, data.neighbor_pairs), data.demand.step_minutes)
