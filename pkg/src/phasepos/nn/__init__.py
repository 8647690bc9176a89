from .spec import Branch, Conv2D, Dense, Flatten, NetworkSpec, NetworkState, init_state
from .engine import (backward, forward, loss_and_grads, mse_loss, predict,
                     relu, scce_loss, softmax, total_loss)
from .optim import adam_step
from .pruning import apply_pruning, layer_sparsities, sparsity_at_epoch
from .flops import FlopTally, conv_flops, dense_flops, flop_count, flop_report
from .training import TrainConfig, TrainHistory, train
from .serialize import (history_from_header, load_weights, save_history_csv,
                        save_weights)

__all__ = [
    "Branch", "Conv2D", "Dense", "Flatten", "NetworkSpec", "NetworkState",
    "init_state", "forward", "backward", "predict", "loss_and_grads",
    "relu", "softmax", "mse_loss", "scce_loss", "total_loss", "adam_step",
    "apply_pruning", "sparsity_at_epoch", "layer_sparsities",
    "FlopTally", "dense_flops", "conv_flops", "flop_count", "flop_report",
    "TrainConfig", "TrainHistory", "train",
    "save_weights", "load_weights", "history_from_header", "save_history_csv",
]
