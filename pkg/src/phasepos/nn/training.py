"""Mini-batch training loop: Adam + L2, per-epoch shuffling, pruning ramp.

The shuffle order for epoch e is drawn from an RNG derived from (seed,
"shuffle", e), so resuming from a checkpoint at any epoch boundary replays
the exact same batch sequence and produces bit-identical weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..common import ConfigError, NumericError, derive_rng
from .engine import loss_and_grads, total_loss, predict
from .optim import adam_step
from .pruning import apply_pruning, sparsity_at_epoch
from .spec import NetworkSpec, NetworkState


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1000
    epochs: int = 1000
    learning_rate: float = 1e-4
    l2_coeff: float = 1e-5
    prune_start_epoch: int = 100
    prune_end_epoch: int = 400
    target_sparsity: float = 0.0
    decay_power: int = 3
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.target_sparsity < 1.0):
            raise ConfigError(f"target_sparsity must be in [0, 1), got {self.target_sparsity}")
        if not (0 <= self.prune_start_epoch < self.prune_end_epoch <= self.epochs):
            raise ConfigError(
                f"need 0 <= prune_start < prune_end <= epochs, got "
                f"{self.prune_start_epoch}, {self.prune_end_epoch}, {self.epochs}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size, "epochs": self.epochs,
            "learning_rate": self.learning_rate, "l2_coeff": self.l2_coeff,
            "prune_start_epoch": self.prune_start_epoch,
            "prune_end_epoch": self.prune_end_epoch,
            "target_sparsity": self.target_sparsity,
            "decay_power": self.decay_power, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)       # int
    train_losses: list = field(default_factory=list)  # incl. L2 term
    val_losses: list = field(default_factory=list)    # incl. L2 term; nan if no val set

    def to_rows(self):
        return list(zip(self.epochs, self.train_losses, self.val_losses))


def _epoch_sparsity(cfg: TrainConfig, epoch: int) -> float:
    return sparsity_at_epoch(cfg.target_sparsity, epoch,
                             cfg.prune_start_epoch, cfg.prune_end_epoch, cfg.decay_power)


def learning_rate_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Cosine-annealed step size: cfg.learning_rate is the initial value and
    the schedule decays to 1% of it by the final epoch.  Depends only on the
    epoch index, so checkpoint resumes replay the identical schedule.
    """
    if cfg.epochs == 1:
        return cfg.learning_rate
    lr_min = 0.01 * cfg.learning_rate
    t = epoch / (cfg.epochs - 1)
    return lr_min + 0.5 * (cfg.learning_rate - lr_min) * (1.0 + np.cos(np.pi * t))


def train(spec: NetworkSpec, state: NetworkState, x: np.ndarray, y: np.ndarray,
          cfg: TrainConfig, x_val: np.ndarray | None = None,
          y_val: np.ndarray | None = None, start_epoch: int = 0,
          history: TrainHistory | None = None, progress=None,
          checkpoint_cb=None, checkpoint_every: int = 25) -> TrainHistory:
    """Train in place from `start_epoch` to cfg.epochs; returns the loss history.

    `checkpoint_cb(epoch, state, history)` fires after every `checkpoint_every`
    epochs and after the final one. Non-finite losses abort with the failing
    epoch and batch in the message.
    """
    n = x.shape[0]
    if y.shape[0] != n:
        raise ConfigError(f"{n} inputs but {y.shape[0]} targets")
    if history is None:
        history = TrainHistory()

    for epoch in range(start_epoch, cfg.epochs):
        if cfg.target_sparsity > 0 and cfg.prune_start_epoch <= epoch <= cfg.prune_end_epoch:
            apply_pruning(state, _epoch_sparsity(cfg, epoch))

        order = derive_rng(cfg.seed, "shuffle", str(epoch)).permutation(n)
        lr = learning_rate_at_epoch(cfg, epoch)
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(spec, state, x[idx], y[idx], cfg.l2_coeff)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch {start // cfg.batch_size}")
            adam_step(state, grads, lr)
            running += loss * len(idx)
        train_loss = running / n

        if x_val is not None:
            val_out = predict(spec, state, x_val)
            val_loss = total_loss(spec, state, val_out, y_val, cfg.l2_coeff)
            if not np.isfinite(val_loss):
                raise NumericError(f"non-finite validation loss at epoch {epoch}")
        else:
            val_loss = float("nan")

        history.epochs.append(epoch)
        history.train_losses.append(float(train_loss))
        history.val_losses.append(float(val_loss))
        if progress is not None:
            progress(f"epoch {epoch + 1}/{cfg.epochs} train {train_loss:.6g} val {val_loss:.6g}")
        done = epoch + 1
        if checkpoint_cb is not None and (done % checkpoint_every == 0 or done == cfg.epochs):
            checkpoint_cb(done, state, history)

    # schedule endpoint lands exactly on the target even if it coincides
    # with the final epoch boundary
    if cfg.target_sparsity > 0 and cfg.prune_end_epoch == cfg.epochs:
        apply_pruning(state, cfg.target_sparsity)
    return history
