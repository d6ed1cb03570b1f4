# Mini-batch training loop with early stopping

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, NamedTuple, Optional

import numpy as np
import pandas as pd
import torch
from torch import Tensor

from core.config import TrainConfig
from core.data.dataset import WindowBatch
from core.errors import EmptyBatchError, TrainingDivergedError
from core.model.layers import DTYPE, make_generator
from core.model.network import CityChargeNet, structure_tensors
from core.region.features import RegionStructure
from core.training.optim import check_finite_grads, mse_loss

logger = logging.getLogger(__name__)

EVAL_BATCH_SIZE = 2048


def derived_seed(*parts: int) -> int:
    """Stable 32-bit seed for a (run seed, epoch, stream) tuple"""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


class EarlyStopping:
    """Stop when the validation loss has not strictly improved for `patience` epochs

    Attributes:
        counter: consecutive epochs without improvement
        best_loss: lowest validation loss seen
        best_epoch: epoch of best_loss
        early_stop: set once patience is exhausted
    """

    def __init__(self, patience: int = 50, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.counter = 0
        self.best_loss: Optional[float] = None
        self.best_epoch: Optional[int] = None
        self.early_stop = False

    def __call__(self, val_loss: float, epoch: int) -> bool:
        """Record one epoch; returns True when it is a new best"""
        if self.best_loss is None or self.best_loss - val_loss > self.min_delta:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.counter = 0
            return True
        self.counter += 1
        if self.counter >= self.patience:
            self.early_stop = True
        return False


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    clipped: List[int] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list, compare=False)
    best_epoch: Optional[int] = None
    stop_reason: Optional[str] = None

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    @property
    def best_val_loss(self) -> Optional[float]:
        return min(self.val_loss) if self.val_loss else None

    def record(self, train_loss: float, val_loss: float, clipped: int, seconds: float) -> None:
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)
        self.clipped.append(clipped)
        self.seconds.append(seconds)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "epoch": np.arange(1, self.epochs + 1),
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "seconds": self.seconds,
            "clipped": self.clipped,
        })

    def to_dict(self) -> Dict[str, Any]:
        """Everything but wall-clock seconds, so identical runs serialize identically"""
        return {
            "train_loss": list(self.train_loss),
            "val_loss": list(self.val_loss),
            "clipped": list(self.clipped),
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainHistory":
        data = dict(data)
        data.setdefault("seconds", [float("nan")] * len(data["train_loss"]))
        return cls(**data)


class ResumeState(NamedTuple):
    """Where an interrupted run left off"""

    model_state: Dict[str, Tensor]
    optimizer_state: Dict[str, Any]
    history: TrainHistory
    best_state: Dict[str, Tensor]


class TrainResult(NamedTuple):
    model: CityChargeNet
    history: TrainHistory
    optimizer_state: Dict[str, Any]
    last_state: Dict[str, Tensor]


EpochCallback = Callable[[int, CityChargeNet, torch.optim.Optimizer, TrainHistory, Dict[str, Tensor]], None]


def _snapshot(model: torch.nn.Module) -> Dict[str, Tensor]:
    return {name: t.detach().clone() for name, t in model.state_dict().items()}


def _as_tensor(array: np.ndarray) -> Tensor:
    return torch.as_tensor(np.asarray(array), dtype=DTYPE)


@torch.no_grad()
def predict(model: CityChargeNet, batch: WindowBatch, structure: RegionStructure,
            batch_size: int = EVAL_BATCH_SIZE) -> np.ndarray:
    """Eval-mode predictions [S x N x H] with zero Gumbel noise"""
    if len(batch) == 0:
        raise EmptyBatchError("nothing to predict")
    was_training = model.training
    model.eval()
    incidence, adjacency = structure_tensors(structure)
    chunks = []
    for start in range(0, len(batch), batch_size):
        inputs = _as_tensor(batch.inputs[start:start + batch_size])
        chunks.append(model(inputs, incidence, adjacency, "zero").numpy())
    model.train(was_training)
    return np.concatenate(chunks, axis=0)


def evaluate_loss(model: CityChargeNet, batch: WindowBatch, structure: RegionStructure,
                  batch_size: int = EVAL_BATCH_SIZE) -> float:
    """Pooled MSE over every element of the batch"""
    pred = predict(model, batch, structure, batch_size)
    return float(np.mean((pred - np.asarray(batch.targets)) ** 2))


def train(model: CityChargeNet, train_batches: WindowBatch, val_batches: WindowBatch,
          structure: RegionStructure, config: TrainConfig, resume: Optional[ResumeState] = None,
          on_epoch: Optional[EpochCallback] = None) -> TrainResult:
    """Fit the model with Adam on shuffled mini-batches and keep the best-validation snapshot

    Every stochastic stream is derived from (config.seed, epoch): the shuffle
    order, the Gumbel noise and dropout.

    Args:
        model: Initialized network; trained in place
        train_batches: Training windows
        val_batches: Validation windows
        structure: Region structure matching the batches
        config: Optimization settings
        resume: State of an interrupted run to continue from
        on_epoch: Called after every epoch (used for checkpointing)

    Returns:
        TrainResult whose model holds the best-validation parameters
    """
    if len(train_batches) == 0 or len(val_batches) == 0:
        raise EmptyBatchError("training and validation sets must be non-empty")

    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=config.adam_betas, eps=config.adam_eps
    )
    history = TrainHistory()
    stopper = EarlyStopping(config.patience)
    best_state = _snapshot(model)
    if resume is not None:
        model.load_state_dict(resume.model_state)
        optimizer.load_state_dict(resume.optimizer_state)
        history = resume.history
        best_state = {k: v.clone() for k, v in resume.best_state.items()}
        for epoch, val_loss in enumerate(history.val_loss, start=1):
            stopper(val_loss, epoch)
        logger.info(f"Resuming after epoch {history.epochs} (best epoch {stopper.best_epoch})")

    incidence, adjacency = structure_tensors(structure)
    noise_mode = "sampled" if model.config.gumbel else "zero"
    n_samples = len(train_batches)
    params = list(model.parameters())
    named = list(model.named_parameters())
    step = history.epochs * math.ceil(n_samples / config.batch_size)

    stop_reason = "patience" if stopper.early_stop else "max_epochs"
    first_epoch = config.max_epochs + 1 if stopper.early_stop else history.epochs + 1
    for epoch in range(first_epoch, config.max_epochs + 1):
        started = time.perf_counter()
        model.train()
        torch.manual_seed(derived_seed(config.seed, epoch, 2))
        generator = make_generator(derived_seed(config.seed, epoch, 1))
        order = np.random.default_rng([config.seed, epoch]).permutation(n_samples)

        total, clipped = 0.0, 0
        for start in range(0, n_samples, config.batch_size):
            idx = order[start:start + config.batch_size]
            step += 1
            optimizer.zero_grad(set_to_none=True)
            pred = model(_as_tensor(train_batches.inputs[idx]), incidence, adjacency, noise_mode, generator)
            loss = mse_loss(pred, _as_tensor(train_batches.targets[idx]))
            if not bool(torch.isfinite(loss)):
                raise TrainingDivergedError(epoch, stopper.best_epoch, f"training loss is {loss.item()}")
            loss.backward()
            check_finite_grads(((name, p.grad) for name, p in named), step)
            if config.clip_norm is not None:
                norm = torch.nn.utils.clip_grad_norm_(params, config.clip_norm)
                if float(norm) > config.clip_norm:
                    clipped += 1
            optimizer.step()
            total += loss.item() * len(idx)

        train_loss = total / n_samples
        val_loss = evaluate_loss(model, val_batches, structure)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(epoch, stopper.best_epoch, f"validation loss is {val_loss}")
        if stopper(val_loss, epoch):
            best_state = _snapshot(model)
        history.record(train_loss, val_loss, clipped, time.perf_counter() - started)
        history.best_epoch = stopper.best_epoch

        if clipped:
            logger.warning(f"Epoch {epoch}: gradient norm clipped on {clipped} batch(es)")
        if epoch % config.log_every == 0 or epoch == 1:
            logger.info(f"Epoch {epoch}: train {train_loss:.6g}, val {val_loss:.6g}, best epoch {stopper.best_epoch}")
        if on_epoch is not None:
            on_epoch(epoch, model, optimizer, history, best_state)
        if stopper.early_stop:
            stop_reason = "patience"
            break

    history.stop_reason = stop_reason
    last_state = _snapshot(model)
    optimizer_state = optimizer.state_dict()
    model.load_state_dict(best_state)
    model.eval()
    logger.info(
        f"Training stopped ({stop_reason}) after {history.epochs} epochs; "
        f"best epoch {history.best_epoch}, val loss {history.best_val_loss:.6g}"
    )
    return TrainResult(model, history, optimizer_state, last_state)
