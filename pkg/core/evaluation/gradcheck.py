# Analytic vs central finite-difference gradient checks
#
# A case builder returns an objective closure plus the named leaf tensors it
# depends on. The objective projects the layer output on fixed random weights
# so that normalization layers do not produce a constant sum.

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional

import numpy as np
import torch
from torch import Tensor

from core.config import ModelConfig
from core.errors import DomainError
from core.model import layers
from core.model.layers import DTYPE
from core.model.network import init_model

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
LAYER_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3


class GradCase(NamedTuple):
    objective: Callable[[], Tensor]
    tensors: Dict[str, Tensor]


CaseBuilder = Callable[[np.random.Generator, torch.Generator], GradCase]


@dataclass(frozen=True)
class GradEntry:
    trial: int
    tensor: str
    rel_error: float
    passed: bool


@dataclass
class GradReport:
    layer: str
    tolerance: float
    entries: List[GradEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    @property
    def failures(self) -> List[GradEntry]:
        return [e for e in self.entries if not e.passed]

    def per_tensor(self) -> Dict[str, float]:
        worst: Dict[str, float] = {}
        for e in self.entries:
            worst[e.tensor] = max(worst.get(e.tensor, 0.0), e.rel_error)
        return worst

    def to_dict(self) -> Dict[str, object]:
        return {
            "layer": self.layer,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "per_tensor": self.per_tensor(),
            "failures": [e.tensor for e in self.failures],
        }


def _randn(gen: torch.Generator, *shape: int, scale: float = 1.0) -> Tensor:
    return (scale * torch.randn(*shape, generator=gen, dtype=DTYPE)).requires_grad_(True)


def _projection(gen: torch.Generator, like: Tensor) -> Tensor:
    return torch.randn(like.shape, generator=gen, dtype=DTYPE)


def _module_case(module: torch.nn.Module, inputs: Dict[str, Tensor], call: Callable[[], Tensor],
                 gen: torch.Generator) -> GradCase:
    module.eval()
    for p in module.parameters():
        with torch.no_grad():
            p.copy_(0.5 * torch.randn(p.shape, generator=gen, dtype=DTYPE))
    weights = _projection(gen, call())
    tensors = dict(inputs)
    tensors.update(dict(module.named_parameters()))
    return GradCase(lambda: (call() * weights).sum(), tensors)


def _elu_case(rng: np.random.Generator, gen: torch.Generator) -> GradCase:
    x = _randn(gen, int(rng.integers(2, 6)), int(rng.integers(2, 6)))
    weights = _projection(gen, x)
    return GradCase(lambda: (layers.elu(x) * weights).sum(), {"x": x})


def _glu_case(rng: np.random.Generator, gen: torch.Generator) -> GradCase:
    width = int(rng.integers(2, 5))
    x = _randn(gen, 3, width)
    w1, w2 = _randn(gen, width, width), _randn(gen, width, width)
    b1, b2 = _randn(gen, width), _randn(gen, width)
    weights = torch.randn(3, width, generator=gen, dtype=DTYPE)
    return GradCase(lambda: (layers.glu(x, w1, b1, w2, b2) * weights).sum(),
                    {"x": x, "w1": w1, "b1": b1, "w2": w2, "b2": b2})


def _grn_case(rng: np.random.Generator, gen: torch.Generator) -> GradCase:
    width, hidden = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    module = layers.GatedResidualNetwork(width, hidden)
    x = _randn(gen, 3, width)
    return _module_case(module, {"x": x}, lambda: module(x), gen)


def _soft_attention_case(rng: np.random.Generator, gen: torch.Generator) -> GradCase:
    width, members = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    center, group, weight = _randn(gen, width), _randn(gen, members, width), _randn(gen, 1, 2 * width)
    weights = torch.randn(width, generator=gen, dtype=DTYPE)
    return GradCase(lambda: (layers.soft_attention(center, group, weight).values * weights).sum(),
                    {"center": center, "members": group, "weight": weight})


def _hypergraph_case(rng: np.random.Generator, gen: torch.Generator) -> GradCase:
    n_areas, width = int(rng.integers(3, 6)), int(rng.integers(2, 4))
    n_clusters = int(rng.integers(2, n_areas + 1))
    labels = rng.permutation(np.arange(n_areas) % n_clusters)
    incidence = torch.zeros(n_areas, n_clusters, dtype=DTYPE)
    incidence[torch.arange(n_areas), torch.as_tensor(labels)] = 1.0
    module = layers.HypergraphAttention(width)
    x = _randn(gen, n_areas, width)
    return _module_case(module, {"x": x}, lambda: module(x, incidence), gen)


def _graph_case(rng: np.random.Generator, gen: torch.Generator) -> GradCase:
    n_areas, width = int(rng.integers(3, 6)), int(rng.integers(2, 4))
    upper = np.triu(rng.random((n_areas, n_areas)) < 0.5, k=1)
    adjacency = torch.as_tensor((upper | upper.T).astype(np.float64))
    module = layers.GraphAttention(width)
    x = _randn(gen, n_areas, width)
    return _module_case(module, {"x": x}, lambda: module(x, adjacency), gen)


def _add_norm_case(rng: np.random.Generator, gen: torch.Generator) -> GradCase:
    width = int(rng.integers(2, 6))
    module = layers.AddNorm(width)
    a, b, c = _randn(gen, 3, width), _randn(gen, 3, width), _randn(gen, 3, width)
    return _module_case(module, {"a": a, "b": b, "c": c}, lambda: module(a, b, c), gen)


def _gumbel_case(rng: np.random.Generator, gen: torch.Generator) -> GradCase:
    scores = _randn(gen, 3, int(rng.integers(2, 6)))
    temperature = float(rng.uniform(0.5, 2.0))
    weights = _projection(gen, scores)
    return GradCase(lambda: (layers.gumbel_softmax(scores, temperature, "zero") * weights).sum(), {"scores": scores})


def _gta_case(rng: np.random.Generator, gen: torch.Generator) -> GradCase:
    steps, width = int(rng.integers(2, 5)), int(rng.integers(2, 4))
    q, k, v = _randn(gen, 2, steps, width), _randn(gen, 2, steps, width), _randn(gen, 2, steps, width)
    temperature = float(rng.uniform(0.5, 2.0))
    weights = torch.randn(2, steps, width, generator=gen, dtype=DTYPE)
    return GradCase(
        lambda: (layers.gated_temporal_attention(q, k, v, temperature, "zero").values * weights).sum(),
        {"q": q, "k": k, "v": v},
    )


def _variable_selection_case(rng: np.random.Generator, gen: torch.Generator) -> GradCase:
    n_features = int(rng.integers(2, 4))
    module = layers.VariableSelection(n_features, int(rng.integers(2, 5)))
    features = _randn(gen, 2, 3, n_features)
    return _module_case(module, {"features": features}, lambda: module(features).values, gen)


def _encoder_block_case(rng: np.random.Generator, gen: torch.Generator) -> GradCase:
    d_model, steps = int(rng.integers(2, 4)), int(rng.integers(2, 4))
    module = layers.EncoderBlock(d_model, float(rng.uniform(0.5, 2.0)))
    sequence = _randn(gen, 2, steps, d_model)
    return _module_case(module, {"sequence": sequence}, lambda: module(sequence, "zero"), gen)


def _model_case(rng: np.random.Generator, gen: torch.Generator) -> GradCase:
    """MSE of the whole network on a [1 x 3 x 12] instance"""
    config = ModelConfig(lookback=12, clusters=2, encoder_blocks=1, d_model=4, dropout=0.0)
    model = init_model(config, seed=int(rng.integers(0, 2 ** 31)))
    inputs = torch.rand(1, 3, config.lookback, 3, generator=gen, dtype=DTYPE)
    target = torch.rand(1, 3, config.n_horizons, generator=gen, dtype=DTYPE)
    incidence = torch.tensor([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], dtype=DTYPE)
    adjacency = torch.tensor([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]], dtype=DTYPE)

    def objective() -> Tensor:
        return ((model(inputs, incidence, adjacency, "zero") - target) ** 2).mean()

    return GradCase(objective, dict(model.named_parameters()))


_REGISTRY: Dict[str, CaseBuilder] = {
    "elu": _elu_case,
    "glu": _glu_case,
    "grn": _grn_case,
    "soft_attention": _soft_attention_case,
    "hypergraph_attention": _hypergraph_case,
    "graph_attention": _graph_case,
    "add_norm": _add_norm_case,
    "gumbel_softmax": _gumbel_case,
    "gated_temporal_attention": _gta_case,
    "variable_selection": _variable_selection_case,
    "encoder_block": _encoder_block_case,
    "model": _model_case,
}


def registered_layers() -> List[str]:
    return list(_REGISTRY)


def register_case(layer_id: str, builder: CaseBuilder) -> None:
    _REGISTRY[layer_id] = builder


def unregister_case(layer_id: str) -> None:
    _REGISTRY.pop(layer_id, None)


def _numeric_gradient(objective: Callable[[], Tensor], tensor: Tensor, step: float) -> Tensor:
    grad = torch.zeros_like(tensor)
    flat = tensor.detach().view(-1)
    flat_grad = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + step
            plus = objective().item()
            flat[i] = original - step
            minus = objective().item()
            flat[i] = original
            flat_grad[i] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(analytic: Tensor, numeric: Tensor) -> float:
    """max|a - n| / max(max|a|, max|n|, 1e-8)"""
    diff = float((analytic - numeric).abs().max())
    scale = max(float(analytic.abs().max()), float(numeric.abs().max()), 1e-8)
    return diff / scale


def check_gradients(layer_id: str, trials: int = 10, tolerance: Optional[float] = None,
                    seed: int = 0, step: float = FD_STEP) -> GradReport:
    """Compare autograd gradients with central differences on random small instances

    Args:
        layer_id: A registered layer (see registered_layers)
        trials: Number of random instances
        tolerance: Maximum relative error; defaults to 1e-4 for layers, 1e-3 for the model
        seed: Seed of the instance generator
        step: Finite-difference step

    Returns:
        GradReport with one entry per (trial, tensor)
    """
    if layer_id not in _REGISTRY:
        raise DomainError(f"no gradient case for '{layer_id}'. Registered: {', '.join(_REGISTRY)}")
    if tolerance is None:
        tolerance = MODEL_TOLERANCE if layer_id == "model" else LAYER_TOLERANCE

    report = GradReport(layer_id, tolerance)
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        gen = torch.Generator().manual_seed(int(rng.integers(0, 2 ** 31)))
        case = _REGISTRY[layer_id](rng, gen)
        names = list(case.tensors)
        leaves = [case.tensors[n] for n in names]
        analytic = torch.autograd.grad(case.objective(), leaves, allow_unused=True)
        for name, leaf, grad in zip(names, leaves, analytic):
            grad = torch.zeros_like(leaf) if grad is None else grad
            error = relative_error(grad, _numeric_gradient(case.objective, leaf, step))
            report.entries.append(GradEntry(trial, name, error, error < tolerance))

    if report.passed:
        logger.info(f"Gradient check {layer_id}: pass (max rel. error {report.max_rel_error:.2e})")
    else:
        names = sorted({e.tensor for e in report.failures})
        logger.warning(f"Gradient check {layer_id}: FAIL on {', '.join(names)}")
    return report
