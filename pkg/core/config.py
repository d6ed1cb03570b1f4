# Configuration models
#
# Every config is a pydantic model that rejects unknown keys. Run configs and
# dataset descriptors are read from TOML (or the JSON echo written as run.json).

import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from core.errors import ConfigError

logger = logging.getLogger(__name__)

FEATURE_ORDER = ("demand", "price", "temperature")

VARIANTS = (
    "full",
    "no_module_a",
    "no_module_b",
    "no_module_c",
    "no_price",
    "no_temperature",
    "no_var_sel",
    "softmax_instead_of_gumbel",
)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelConfig(_Strict):
    """Architecture of the network"""

    lookback: int = Field(12, gt=0)
    clusters: int = Field(10, gt=0)
    encoder_blocks: int = Field(2, gt=0)
    temperature: float = Field(1.5, gt=0.0)
    d_model: int = Field(64, gt=0)
    horizons: Tuple[int, ...] = (3, 6, 9, 12)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    variant: str = "full"
    anchor_last_value: bool = False

    @field_validator("horizons")
    @classmethod
    def _positive_horizons(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value or any(h <= 0 for h in value):
            raise ValueError("horizons must be a non-empty list of positive step counts")
        if list(value) != sorted(set(value)):
            raise ValueError("horizons must be strictly increasing")
        return value

    @field_validator("variant")
    @classmethod
    def _known_variant(cls, value: str) -> str:
        if value not in VARIANTS:
            raise ValueError(f"unknown variant '{value}'. Must be one of: {', '.join(VARIANTS)}")
        return value

    @property
    def use_hypergraph(self) -> bool:
        return self.variant != "no_module_a"

    @property
    def use_graph(self) -> bool:
        return self.variant != "no_module_b"

    @property
    def use_encoder(self) -> bool:
        return self.variant != "no_module_c"

    @property
    def use_var_sel(self) -> bool:
        return self.variant != "no_var_sel"

    @property
    def gumbel(self) -> bool:
        return self.variant != "softmax_instead_of_gumbel"

    @property
    def features(self) -> Tuple[str, ...]:
        """Input features fed to variable selection, in order"""
        names = ["demand"]
        if self.variant != "no_price":
            names.append("price")
        if self.variant != "no_temperature":
            names.append("temperature")
        return tuple(names)

    @property
    def n_horizons(self) -> int:
        return len(self.horizons)


class TrainConfig(_Strict):
    max_epochs: int = Field(2000, gt=0)
    patience: int = Field(50, gt=0)
    batch_size: int = Field(512, gt=0)
    learning_rate: float = Field(1e-3, ge=0.0)
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = Field(1e-8, gt=0.0)
    clip_norm: Optional[float] = Field(5.0, gt=0.0)
    seed: int = 0
    log_every: int = Field(10, gt=0)

    @model_validator(mode="after")
    def _patience_below_max(self) -> "TrainConfig":
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        return self


class SynthConfig(_Strict):
    n_areas: int = Field(20, ge=4)
    groups: int = Field(3, ge=2)
    t_steps: int = Field(4032, gt=0)
    step_minutes: int = Field(5, gt=0)
    lookback: int = Field(12, gt=0)
    noise: float = Field(0.02, ge=0.0)
    amplitude: float = Field(0.3, gt=0.0)
    base_level: float = Field(0.5, ge=0.0, le=1.0)
    price_response: float = Field(0.05, ge=0.0)
    poi_categories: int = Field(14, ge=2)
    pois_per_area: int = Field(400, gt=0)
    poi_noise: float = Field(0.0, ge=0.0, le=1.0)
    start_time: str = "2022-06-19T00:00:00"

    @model_validator(mode="after")
    def _enough_structure(self) -> "SynthConfig":
        if self.groups > self.n_areas:
            raise ValueError("groups cannot exceed n_areas")
        if self.t_steps < 10 * self.lookback:
            raise ValueError(f"t_steps must be at least 10 x lookback ({10 * self.lookback})")
        if self.poi_categories < self.groups:
            raise ValueError("poi_categories must be at least groups")
        return self


class DatasetDescriptor(_Strict):
    """Paths and grid layout of a dataset bundle"""

    demand: str
    price: str
    temperature: str
    poi: Optional[str] = None
    adjacency: Optional[str] = None
    labels: Optional[str] = None
    orientation: Literal["time_by_area", "area_by_time"] = "time_by_area"
    step_minutes: int = Field(5, gt=0)
    price_step_minutes: int = Field(5, gt=0)
    temperature_step_minutes: int = Field(30, gt=0)
    horizons: Optional[Tuple[int, ...]] = None
    root: Optional[str] = None

    def resolve(self, name: str) -> Optional[Path]:
        value = getattr(self, name)
        if value is None:
            return None
        path = Path(value)
        if not path.is_absolute() and self.root:
            path = Path(self.root) / path
        return path


class TuneGrid(_Strict):
    encoder_blocks: Tuple[int, ...] = (1, 2, 3)
    temperature: Tuple[float, ...] = (0.5, 1.0, 1.5, 2.0)


class RunConfig(_Strict):
    """Declarative description of one pipeline run"""

    dataset: Optional[str] = None
    out: str = "runs/default"
    seed: int = 0
    clusters: int = Field(10, gt=0)
    sweep: Optional[str] = None
    variants: Tuple[str, ...] = VARIANTS
    resume: bool = False
    predictions_path: Optional[str] = None
    correlation_threshold: float = 0.4
    model: Dict[str, Any] = Field(default_factory=dict)
    train: Dict[str, Any] = Field(default_factory=dict)
    synth: Dict[str, Any] = Field(default_factory=dict)
    tune: TuneGrid = TuneGrid()

    @field_validator("variants")
    @classmethod
    def _known_variants(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        unknown = [v for v in value if v not in VARIANTS]
        if unknown:
            raise ValueError(f"unknown variant(s): {', '.join(unknown)}")
        return value

    @field_validator("model")
    @classmethod
    def _model_overrides(cls, value: Dict[str, Any]) -> Dict[str, Any]:
        ModelConfig(**value)
        return value

    @field_validator("train")
    @classmethod
    def _train_overrides(cls, value: Dict[str, Any]) -> Dict[str, Any]:
        TrainConfig(**value)
        return value

    @field_validator("synth")
    @classmethod
    def _synth_overrides(cls, value: Dict[str, Any]) -> Dict[str, Any]:
        SynthConfig(**value)
        return value

    def model_config_for(self, descriptor: Optional[DatasetDescriptor] = None, **overrides: Any) -> ModelConfig:
        """Effective model config: defaults, descriptor horizons, run overrides, then call overrides"""
        values: Dict[str, Any] = {"clusters": self.clusters}
        if descriptor is not None and descriptor.horizons:
            values["horizons"] = descriptor.horizons
        values.update(self.model)
        values.update(overrides)
        return ModelConfig(**values)

    def train_config(self, **overrides: Any) -> TrainConfig:
        values: Dict[str, Any] = {"seed": self.seed}
        values.update(self.train)
        values.update(overrides)
        return TrainConfig(**values)

    def synth_config(self) -> SynthConfig:
        return SynthConfig(**self.synth)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


def _read_mapping(path: Path) -> Dict[str, Any]:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix == ".json":
            return json.loads(path.read_text(encoding="utf-8"))
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: {e}") from e


def load_run_config(path: Optional[str], **cli_overrides: Any) -> RunConfig:
    """Read a run config file (TOML or run.json) and apply command-line overrides

    Args:
        path: Path to the config file, or None for defaults
        **cli_overrides: Flag values; None entries are ignored

    Returns:
        Validated RunConfig
    """
    values: Dict[str, Any] = {}
    if path:
        values = _read_mapping(Path(path))
        dataset = values.get("dataset")
        if dataset and not Path(dataset).is_absolute():
            candidate = Path(path).parent / dataset
            if candidate.exists():
                values["dataset"] = str(candidate)
    for key, value in cli_overrides.items():
        if value is not None:
            values[key] = value
    return RunConfig(**values)


def load_descriptor(path: str) -> DatasetDescriptor:
    """Read a dataset descriptor; relative paths resolve against its directory"""
    values = _read_mapping(Path(path))
    values.setdefault("root", str(Path(path).resolve().parent))
    return DatasetDescriptor(**values)
