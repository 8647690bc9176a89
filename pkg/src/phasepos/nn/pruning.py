"""Layerwise magnitude pruning on a polynomial-decay sparsity ramp.

Each weight matrix/kernel is pruned independently (biases never), so every
layer's sparsity tracks the schedule within one weight. Masks are monotone:
once a weight is masked it stays masked for the rest of the run.
"""

from __future__ import annotations

import numpy as np

from .spec import NetworkState


def sparsity_at_epoch(target_sparsity: float, epoch: int, start: int, end: int,
                      power: int = 3) -> float:
    """0 before `start`; ramps as target*(1 - (1 - u)^power), u = progress; flat after."""
    if epoch <= start:
        return 0.0
    if epoch >= end:
        return target_sparsity
    u = (epoch - start) / (end - start)
    return target_sparsity * (1.0 - (1.0 - u) ** power)


def apply_pruning(state: NetworkState, sparsity: float) -> None:
    """Mask the floor(sparsity * n) smallest-magnitude weights of each layer.

    Already-masked weights (exactly zero) sort first, which keeps masks
    monotone as the schedule ramps up. Ties break by lowest flat index.
    """
    if not (0.0 <= sparsity < 1.0):
        raise ValueError(f"sparsity must be in [0, 1), got {sparsity}")
    for name, mask in state.masks.items():
        w = state.params[name]
        n = w.size
        k = int(np.floor(sparsity * n))
        already = int(n - np.count_nonzero(mask))
        if k <= already:
            continue
        key = np.where(mask.ravel() == 0.0, -1.0, np.abs(w.ravel()))
        order = np.argsort(key, kind="stable")
        new_mask = np.ones(n, dtype=np.float64)
        new_mask[order[:k]] = 0.0
        mask[...] = new_mask.reshape(mask.shape)
        w *= mask


def layer_sparsities(state: NetworkState) -> dict:
    return {name: 1.0 - np.count_nonzero(mask) / mask.size
            for name, mask in state.masks.items()}
