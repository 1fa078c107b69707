"""Training loop: oversampled epochs, Noam-scheduled Adam, best-by-validation-AUC selection."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DivergenceError
from .features import WindowSet
from .metrics import auc
from .model import ModelConfig, Params, forward_logits, init_params, predict_last, save_checkpoint
from .optim import AdamState, adam_step, clip_global_norm, noam_lr, oversample

log = logging.getLogger(__name__)

LOSS_KINDS = ("last", "all")


@dataclass
class TrainConfig:
    warmup: int = 400
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    oversample: bool = True
    loss: str = "last"
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    eval_batch_size: int = 512

    def __post_init__(self):
        if self.warmup < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("warmup, batch_size and epochs must all be >= 1")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_auc: float
    lr: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.train_loss:.6f}\t{self.val_auc:.6f}\t{self.lr:.6e}"


METRIC_HEADER = "epoch\ttrain_loss\tval_auc\tlr"


@dataclass
class TrainResult:
    params: Params
    best_epoch: int
    best_val_auc: float
    history: list[EpochLog] = field(default_factory=list)

    def metric_log(self) -> str:
        return "\n".join([METRIC_HEADER] + [h.line() for h in self.history]) + "\n"


def batch_loss(params: Params, config: ModelConfig, batch: WindowSet, kind: str, rng) -> nx.Tensor:
    logits = forward_logits(params, config, batch.cols, batch.pad, rng)
    if kind == "last":
        return nx.bce_with_logits(logits[:, -1], batch.target)
    real = ~batch.pad
    return nx.bce_with_logits(logits, np.where(real, batch.cols["d"], 0), real.astype(np.float64))


def train(
    train_windows: WindowSet,
    val_windows: WindowSet,
    model_config: ModelConfig,
    config: TrainConfig,
    checkpoint_path: str | Path | None = None,
    checkpoint_meta: dict | None = None,
    on_epoch: Callable[[EpochLog], None] | None = None,
) -> TrainResult:
    """Train from scratch and keep the parameters with the best validation AUC."""
    rng = np.random.default_rng(config.seed)
    params = init_params(model_config, seed=config.seed)
    arrays = {k: t.data for k, t in params.items()}
    state = AdamState(config.beta1, config.beta2, config.adam_eps)
    history: list[EpochLog] = []
    best: tuple[float, int, dict[str, np.ndarray]] | None = None
    step = 0
    lr = 0.0

    for epoch in range(1, config.epochs + 1):
        if config.oversample:
            order = oversample(train_windows.target, rng)
        else:
            order = rng.permutation(len(train_windows))
        total, count = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            batch = train_windows.subset(order[lo: lo + config.batch_size])
            loss = batch_loss(params, model_config, batch, config.loss, rng)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} step {step + 1}",
                    last_good=str(checkpoint_path) if best is not None else None,
                )
            leaf_grads = nx.backward(loss)
            grads = {t.name: g for t, g in leaf_grads.items()}
            clip_global_norm(grads, config.clip_norm)
            step += 1
            lr = noam_lr(step, model_config.d_model, config.warmup)
            adam_step(arrays, grads, state, lr)
            total += value * len(batch)
            count += len(batch)

        val_auc = auc(predict_last(params, model_config, val_windows, config.eval_batch_size), val_windows.target)
        entry = EpochLog(epoch, total / max(count, 1), val_auc, lr)
        history.append(entry)
        log.info("epoch %d loss %.4f val_auc %.4f lr %.3e", epoch, entry.train_loss, val_auc, lr)
        if on_epoch is not None:
            on_epoch(entry)
        if best is None or val_auc > best[0]:
            best = (val_auc, epoch, {k: v.copy() for k, v in arrays.items()})
            if checkpoint_path is not None:
                meta = dict(checkpoint_meta or {}, epoch=str(epoch), val_auc=repr(val_auc))
                save_checkpoint(checkpoint_path, model_config, _as_params(best[2]), meta)

    best_auc, best_epoch, best_arrays = best
    return TrainResult(_as_params(best_arrays), best_epoch, best_auc, history)


def _as_params(arrays: dict[str, np.ndarray]) -> Params:
    return {k: nx.Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}


def train_config_dict(config: TrainConfig) -> dict:
    return asdict(config)
