# Differentiable building blocks of the forecasting network
#
# Every tensor is float64. Attention weights are always row-stochastic over the
# attended (last) axis.

import math
from typing import NamedTuple, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from core.errors import DomainError, EmptyNeighborhoodError, ShapeError, StructureError

DTYPE = torch.float64
LEAKY_SLOPE = 0.2
LAYER_NORM_EPS = 1e-5
NOISE_MODES = ("sampled", "zero")


class AttentionOutput(NamedTuple):
    values: Tensor
    weights: Tensor


def make_generator(seed: Optional[int]) -> Optional[torch.Generator]:
    if seed is None:
        return None
    generator = torch.Generator()
    generator.manual_seed(int(seed))
    return generator


def _check_width(x: Tensor, width: int, where: str) -> None:
    if x.shape[-1] != width:
        raise ShapeError(f"{where}: expected last dimension {width}, got {tuple(x.shape)}")


def elu(x: Tensor) -> Tensor:
    return F.elu(x)


def leaky_relu(x: Tensor) -> Tensor:
    return F.leaky_relu(x, LEAKY_SLOPE)


def glu(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """(W1 x + b1) * sigmoid(W2 x + b2)"""
    if w1.shape[-1] != x.shape[-1] or w2.shape[-1] != x.shape[-1]:
        raise ShapeError(f"GLU weights {tuple(w1.shape)}/{tuple(w2.shape)} do not fit input {tuple(x.shape)}")
    return F.linear(x, w1, b1) * torch.sigmoid(F.linear(x, w2, b2))


def add_norm(inputs: Sequence[Tensor], weight: Optional[Tensor] = None, bias: Optional[Tensor] = None,
             eps: float = LAYER_NORM_EPS) -> Tensor:
    """Sum same-shape tensors, then layer-normalize over the last axis"""
    if len(inputs) < 2:
        raise ShapeError("add_norm needs at least two inputs")
    shape = inputs[0].shape
    for other in inputs[1:]:
        if other.shape != shape:
            raise ShapeError(f"add_norm inputs differ in shape: {tuple(shape)} vs {tuple(other.shape)}")
    total = inputs[0]
    for other in inputs[1:]:
        total = total + other
    return F.layer_norm(total, (shape[-1],), weight, bias, eps)


def gumbel_softmax(scores: Tensor, temperature: float, noise_mode: str = "zero",
                   generator: Optional[torch.Generator] = None, seed: Optional[int] = None) -> Tensor:
    """Tempered softmax of Gumbel-perturbed scores along the last axis

    Scores act directly as log-alpha. With noise_mode "zero" this is the plain
    tempered softmax; "sampled" draws eps = -ln(-ln U) per entry.
    """
    if temperature <= 0:
        raise DomainError(f"Gumbel-Softmax temperature must be positive, got {temperature}")
    if noise_mode == "sampled":
        if generator is None:
            generator = make_generator(seed)
        uniform = torch.rand(scores.shape, generator=generator, dtype=scores.dtype, device=scores.device)
        uniform = uniform.clamp(min=torch.finfo(scores.dtype).tiny)
        scores = scores - torch.log(-torch.log(uniform))
    elif noise_mode != "zero":
        raise DomainError(f"unknown noise mode '{noise_mode}'. Must be one of: {', '.join(NOISE_MODES)}")
    return torch.softmax(scores / temperature, dim=-1)


def soft_attention(center: Tensor, members: Tensor, weight: Tensor) -> AttentionOutput:
    """Feature-aware soft attention of one center over a member set

    weight is the [1 x 2d] coefficient row applied to (center || member).
    """
    if members.ndim != 2 or members.shape[0] == 0:
        raise EmptyNeighborhoodError("soft attention needs a non-empty member set")
    width = center.shape[-1]
    _check_width(members, width, "soft_attention")
    _check_width(weight, 2 * width, "soft_attention weight")
    scores = leaky_relu(members @ weight[0, width:] + center @ weight[0, :width])
    weights = torch.softmax(scores, dim=-1)
    return AttentionOutput(leaky_relu(weights @ members), weights)


def masked_attention(queries: Tensor, keys: Tensor, mask: Tensor, weight: Tensor) -> AttentionOutput:
    """soft_attention for every query at once, restricted to its masked key set

    queries [..., Q, d], keys [..., K, d], mask [Q, K] bool, weight [1, 2d].
    """
    width = queries.shape[-1]
    _check_width(keys, width, "masked_attention")
    if not bool(mask.any(dim=-1).all()):
        raise EmptyNeighborhoodError("every query needs at least one key to attend to")
    score_q = queries @ weight[0, :width]
    score_k = keys @ weight[0, width:]
    scores = leaky_relu(score_q.unsqueeze(-1) + score_k.unsqueeze(-2))
    scores = scores.masked_fill(~mask, float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    return AttentionOutput(leaky_relu(weights @ keys), weights)


def gated_temporal_attention(q: Tensor, k: Tensor, v: Tensor, temperature: float, noise_mode: str = "zero",
                             generator: Optional[torch.Generator] = None, gumbel: bool = True) -> AttentionOutput:
    """Scaled dot-product attention with Gumbel-Softmax (or softmax) rows"""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes q {tuple(q.shape)}, k {tuple(k.shape)}, v {tuple(v.shape)} do not fit")
    scores = q @ k.transpose(-2, -1) / math.sqrt(k.shape[-1])
    if gumbel:
        weights = gumbel_softmax(scores, temperature, noise_mode, generator)
    else:
        weights = torch.softmax(scores, dim=-1)
    return AttentionOutput(weights @ v, weights)


class GatedLinearUnit(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.width = width
        self.value = nn.Linear(width, width, dtype=DTYPE)
        self.gate = nn.Linear(width, width, dtype=DTYPE)

    def forward(self, x: Tensor) -> Tensor:
        _check_width(x, self.width, "GLU")
        return glu(x, self.value.weight, self.value.bias, self.gate.weight, self.gate.bias)


class AddNorm(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.norm = nn.LayerNorm(width, eps=LAYER_NORM_EPS, dtype=DTYPE)

    def forward(self, *inputs: Tensor) -> Tensor:
        return add_norm(inputs, self.norm.weight, self.norm.bias, self.norm.eps)


class GatedResidualNetwork(nn.Module):
    """LayerNorm(x + GLU(W2 ELU(W1 x + b1) + b2)), dropout on the second dense output

    Output width equals input width so the residual needs no projection.
    """

    def __init__(self, width: int, hidden: Optional[int] = None, dropout: float = 0.0):
        super().__init__()
        hidden = hidden or width
        self.width = width
        self.fc1 = nn.Linear(width, hidden, dtype=DTYPE)
        self.fc2 = nn.Linear(hidden, width, dtype=DTYPE)
        self.dropout = nn.Dropout(dropout)
        self.glu = GatedLinearUnit(width)
        self.add_norm = AddNorm(width)

    def forward(self, x: Tensor) -> Tensor:
        _check_width(x, self.width, "GRN")
        activated = elu(self.fc1(x))
        projected = self.dropout(self.fc2(activated))
        return self.add_norm(x, self.glu(projected))


class SoftAttention(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.score = nn.Linear(2 * width, 1, bias=False, dtype=DTYPE)

    def forward(self, center: Tensor, members: Tensor) -> AttentionOutput:
        return soft_attention(center, members, self.score.weight)


class HypergraphAttention(nn.Module):
    """Two-step attentive hypergraph propagation: nodes -> hyperedges -> nodes

    A hyperedge starts from the mean of its member nodes, attends over them,
    and every node then attends over the hyperedges that contain it.
    """

    def __init__(self, width: int):
        super().__init__()
        self.width = width
        self.node_to_edge = nn.Linear(2 * width, 1, bias=False, dtype=DTYPE)
        self.edge_to_node = nn.Linear(2 * width, 1, bias=False, dtype=DTYPE)

    def forward(self, x: Tensor, incidence: Tensor, return_weights: bool = False):
        _check_width(x, self.width, "hypergraph attention")
        if incidence.shape[0] != x.shape[-2]:
            raise StructureError(f"incidence has {incidence.shape[0]} areas, features have {x.shape[-2]}")
        member = incidence > 0
        sizes = incidence.sum(dim=0)
        if bool((sizes == 0).any()):
            raise StructureError("hypergraph has an empty hyperedge")
        centers = (incidence.transpose(0, 1) @ x) / sizes.unsqueeze(-1)
        edges = masked_attention(centers, x, member.transpose(0, 1), self.node_to_edge.weight)
        nodes = masked_attention(x, edges.values, member, self.edge_to_node.weight)
        if return_weights:
            return nodes.values, edges.weights, nodes.weights
        return nodes.values


class GraphAttention(nn.Module):
    """Attention over spatial neighbors; isolated areas attend to themselves only"""

    def __init__(self, width: int):
        super().__init__()
        self.width = width
        self.score = nn.Linear(2 * width, 1, bias=False, dtype=DTYPE)

    @staticmethod
    def neighborhood(adjacency: Tensor) -> Tensor:
        linked = adjacency > 0
        isolated = ~linked.any(dim=-1)
        return linked | torch.diag(isolated)

    def forward(self, x: Tensor, adjacency: Tensor, return_weights: bool = False):
        _check_width(x, self.width, "graph attention")
        if adjacency.shape != (x.shape[-2], x.shape[-2]):
            raise StructureError(f"adjacency {tuple(adjacency.shape)} does not match {x.shape[-2]} areas")
        out = masked_attention(x, x, self.neighborhood(adjacency), self.score.weight)
        return out if return_weights else out.values


class VariableSelection(nn.Module):
    """Per-(area, step) softmax weighting over the F input features

    Two GRNs act on the feature axis: one embeds the features, the other
    produces the selection weights.
    """

    def __init__(self, n_features: int, hidden: Optional[int] = None, dropout: float = 0.0):
        super().__init__()
        self.n_features = n_features
        self.embed = GatedResidualNetwork(n_features, hidden, dropout)
        self.select = GatedResidualNetwork(n_features, hidden, dropout)

    def forward(self, features: Tensor) -> AttentionOutput:
        _check_width(features, self.n_features, "variable selection")
        embedded = self.embed(features)
        weights = torch.softmax(self.select(features), dim=-1)
        return AttentionOutput((weights * embedded).sum(dim=-1), weights)


class GatedTemporalAttention(nn.Module):
    """Q, K, V from three GRNs per step, then gated scaled dot-product attention"""

    def __init__(self, d_model: int, temperature: float, dropout: float = 0.0, gumbel: bool = True):
        super().__init__()
        self.temperature = temperature
        self.gumbel = gumbel
        self.query = GatedResidualNetwork(d_model, d_model, dropout)
        self.key = GatedResidualNetwork(d_model, d_model, dropout)
        self.value = GatedResidualNetwork(d_model, d_model, dropout)

    def forward(self, x: Tensor, noise_mode: str = "zero",
                generator: Optional[torch.Generator] = None) -> AttentionOutput:
        if not self.gumbel:
            noise_mode = "zero"
        return gated_temporal_attention(
            self.query(x), self.key(x), self.value(x),
            self.temperature, noise_mode, generator, gumbel=self.gumbel,
        )


class EncoderBlock(nn.Module):
    """Gated temporal attention and a GRN feed-forward, each closed by Add & Norm"""

    def __init__(self, d_model: int, temperature: float, dropout: float = 0.0, gumbel: bool = True):
        super().__init__()
        self.d_model = d_model
        self.attention = GatedTemporalAttention(d_model, temperature, dropout, gumbel)
        self.attention_norm = AddNorm(d_model)
        self.feed_forward = GatedResidualNetwork(d_model, d_model, dropout)
        self.output_norm = AddNorm(d_model)

    def forward(self, x: Tensor, noise_mode: str = "zero",
                generator: Optional[torch.Generator] = None) -> Tensor:
        _check_width(x, self.d_model, "encoder block")
        attended = self.attention(x, noise_mode, generator).values
        mixed = self.attention_norm(attended, x)
        fed = self.feed_forward(mixed)
        return self.output_norm(mixed, fed)
