# Loss, Adam update and gradient checks

import logging
from typing import Dict, Iterable, NamedTuple, Optional, Tuple

import torch
import torch.nn.functional as F
from torch import Tensor

from core.config import TrainConfig
from core.errors import DomainError, NonFiniteGradientError, ShapeError

logger = logging.getLogger(__name__)


class AdamMoments(NamedTuple):
    """First and second moment estimates keyed by parameter name"""

    first: Dict[str, Tensor]
    second: Dict[str, Tensor]


class AdamResult(NamedTuple):
    params: Dict[str, Tensor]
    moments: AdamMoments


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    return F.mse_loss(pred, target, reduction="mean")


def check_finite_grads(named_grads: Iterable[Tuple[str, Optional[Tensor]]], step: Optional[int] = None) -> None:
    for name, grad in named_grads:
        if grad is not None and not bool(torch.isfinite(grad).all()):
            raise NonFiniteGradientError(name, step)


def adam_step(params: Dict[str, Tensor], grads: Dict[str, Tensor], moments: Optional[AdamMoments],
              t: int, config: TrainConfig) -> AdamResult:
    """One bias-corrected Adam update without touching the inputs

    Args:
        params: Parameter tensors by name
        grads: Gradients by name, same shapes
        moments: Moments after step t-1, or None before the first step
        t: Step index, starting at 1
        config: Supplies learning rate, betas and eps

    Returns:
        Updated parameters and moments
    """
    if t < 1:
        raise DomainError(f"Adam step index must be at least 1, got {t}")
    if set(params) != set(grads):
        raise ShapeError("parameters and gradients name different tensors")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ShapeError(f"gradient of '{name}' has shape {tuple(grads[name].shape)}, expected {tuple(p.shape)}")
    check_finite_grads(grads.items(), t)

    work = {name: p.detach().clone().requires_grad_(True) for name, p in params.items()}
    optimizer = torch.optim.Adam(
        list(work.values()), lr=config.learning_rate, betas=config.adam_betas, eps=config.adam_eps
    )
    for name, p in work.items():
        p.grad = grads[name].detach().clone().to(p.dtype)
        if moments is not None and name in moments.first:
            first, second = moments.first[name].clone(), moments.second[name].clone()
        else:
            first, second = torch.zeros_like(p), torch.zeros_like(p)
        optimizer.state[p] = {"step": torch.tensor(float(t - 1)), "exp_avg": first, "exp_avg_sq": second}

    optimizer.step()

    new_params = {name: p.detach() for name, p in work.items()}
    new_moments = AdamMoments(
        {name: optimizer.state[p]["exp_avg"].detach() for name, p in work.items()},
        {name: optimizer.state[p]["exp_avg_sq"].detach() for name, p in work.items()},
    )
    return AdamResult(new_params, new_moments)
