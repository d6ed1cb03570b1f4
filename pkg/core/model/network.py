# Full forecasting network: spatial fusion, variable selection, temporal encoder, decoder

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
from torch import Tensor

from core.config import FEATURE_ORDER, ModelConfig
from core.data.dataset import WindowBatch
from core.errors import ShapeAuditError, ShapeError, StructureError
from core.model.layers import (
    DTYPE,
    AddNorm,
    EncoderBlock,
    GraphAttention,
    HypergraphAttention,
    VariableSelection,
    make_generator,
)
from core.region.features import RegionStructure

logger = logging.getLogger(__name__)


class CityChargeNet(nn.Module):
    """Per-area multi-horizon occupancy forecaster

    Hypergraph and graph attention both read the raw demand window of every
    area; their outputs are fused with it by Add&Norm. The fused demand, price
    and temperature are weighted by variable selection, lifted to d_model,
    encoded by the gated attention blocks and decoded to all horizons at once.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        tau, d_model = config.lookback, config.d_model

        self.hypergraph = HypergraphAttention(tau) if config.use_hypergraph else None
        self.graph = GraphAttention(tau) if config.use_graph else None
        self.spatial_norm = AddNorm(tau)

        if config.use_var_sel:
            self.variable_selection = VariableSelection(len(config.features), d_model, config.dropout)
        else:
            self.variable_selection = None

        if config.use_encoder:
            self.lift = nn.Linear(1, d_model, dtype=DTYPE)
            self.encoder = nn.ModuleList(
                EncoderBlock(d_model, config.temperature, config.dropout, config.gumbel)
                for _ in range(config.encoder_blocks)
            )
            self.decoder = nn.Linear(tau * d_model, config.n_horizons, dtype=DTYPE)
        else:
            self.lift = None
            self.encoder = None
            self.decoder = nn.Linear(tau, config.n_horizons, dtype=DTYPE)

    @property
    def mode(self) -> str:
        return "train" if self.training else "eval"

    def forward(self, inputs: Tensor, incidence: Tensor, adjacency: Tensor, noise_mode: str = "zero",
                generator: Optional[torch.Generator] = None) -> Tensor:
        """
        Args:
            inputs: [B x N x lookback x 3] in (demand, price, temperature) order
            incidence: [N x C] hyperedge membership
            adjacency: [N x N] symmetric 0/1 neighbor matrix
            noise_mode: "sampled" or "zero" Gumbel noise in temporal attention
            generator: Source of Gumbel noise when sampled

        Returns:
            [B x N x H] predictions
        """
        self._check_inputs(inputs, incidence, adjacency)
        demand = inputs[..., 0]

        fused = [demand]
        if self.graph is not None:
            fused.insert(0, self.graph(demand, adjacency))
        if self.hypergraph is not None:
            fused.insert(0, self.hypergraph(demand, incidence))
        spatial = self.spatial_norm(*fused)

        covariates = [inputs[..., FEATURE_ORDER.index(name)] for name in self.config.features[1:]]
        stacked = torch.stack([spatial, *covariates], dim=-1)
        if self.variable_selection is not None:
            selected = self.variable_selection(stacked).values
        else:
            selected = stacked.mean(dim=-1)

        if self.encoder is not None:
            hidden = self.lift(selected.unsqueeze(-1))
            for block in self.encoder:
                hidden = block(hidden, noise_mode, generator)
            out = self.decoder(hidden.flatten(start_dim=-2))
        else:
            out = self.decoder(selected)

        if self.config.anchor_last_value:
            out = out + demand[..., -1:]
        return out

    def _check_inputs(self, inputs: Tensor, incidence: Tensor, adjacency: Tensor) -> None:
        if inputs.ndim != 4 or inputs.shape[-1] != len(FEATURE_ORDER):
            raise ShapeError(f"inputs must be [B x N x lookback x {len(FEATURE_ORDER)}], got {tuple(inputs.shape)}")
        if inputs.shape[2] != self.config.lookback:
            raise ShapeError(f"inputs have lookback {inputs.shape[2]}, model expects {self.config.lookback}")
        n_areas = inputs.shape[1]
        if incidence.shape[0] != n_areas or adjacency.shape != (n_areas, n_areas):
            raise StructureError(
                f"structure covers {incidence.shape[0]} areas (adjacency {tuple(adjacency.shape)}), batch has {n_areas}"
            )


def structure_tensors(structure: RegionStructure) -> Tuple[Tensor, Tensor]:
    return (
        torch.as_tensor(structure.incidence, dtype=DTYPE),
        torch.as_tensor(structure.adjacency, dtype=DTYPE),
    )


def init_parameters(model: nn.Module, seed: int) -> nn.Module:
    """Xavier-uniform weights and zero biases for every dense layer, in module order"""
    generator = make_generator(seed)
    for module in model.modules():
        if isinstance(module, nn.Linear):
            nn.init.xavier_uniform_(module.weight, generator=generator)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.LayerNorm):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)
    return model


def init_model(config: ModelConfig, seed: int = 0) -> CityChargeNet:
    """Build a network with deterministic initial parameters

    Args:
        config: Architecture
        seed: Initialization seed

    Returns:
        Network in eval mode
    """
    model = init_parameters(CityChargeNet(config), seed)
    model.eval()
    n_params = sum(p.numel() for p in model.parameters())
    logger.info(f"Initialized {config.variant} model with {n_params} parameters (seed {seed})")
    return model


def forward(state: CityChargeNet, batch: WindowBatch, structure: RegionStructure,
            seed: Optional[int] = None) -> Tensor:
    """Predict a window batch

    Gumbel noise is sampled only in train mode for the Gumbel variant; eval
    mode always uses zero noise, so repeated eval calls are bit-identical.
    """
    inputs = torch.as_tensor(np.asarray(batch.inputs), dtype=DTYPE)
    incidence, adjacency = structure_tensors(structure)
    noise_mode = "sampled" if state.training and state.config.gumbel else "zero"
    generator = make_generator(seed) if noise_mode == "sampled" else None
    return state(inputs, incidence, adjacency, noise_mode, generator)


def parameter_inventory(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Expected parameter names and shapes, built without allocating storage"""
    with torch.device("meta"):
        reference = CityChargeNet(config)
    return {name: tuple(p.shape) for name, p in reference.named_parameters()}


def audit_shapes(config: ModelConfig, shapes: Dict[str, Tuple[int, ...]]) -> List[str]:
    """Compare a parameter inventory against what config implies

    Returns:
        Human-readable mismatches, empty when the inventory fits
    """
    expected = parameter_inventory(config)
    mismatches = []
    for name in sorted(set(expected) - set(shapes)):
        mismatches.append(f"missing {name} {expected[name]}")
    for name in sorted(set(shapes) - set(expected)):
        mismatches.append(f"unexpected {name} {tuple(shapes[name])}")
    for name in sorted(set(expected) & set(shapes)):
        if tuple(shapes[name]) != expected[name]:
            mismatches.append(f"{name}: expected {expected[name]}, found {tuple(shapes[name])}")
    return mismatches


def assert_shapes(config: ModelConfig, shapes: Dict[str, Tuple[int, ...]]) -> None:
    mismatches = audit_shapes(config, shapes)
    if mismatches:
        raise ShapeAuditError(mismatches)
