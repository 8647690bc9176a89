"""Adam with bias correction; pruning masks are re-applied after every step."""

from __future__ import annotations

import numpy as np

from .spec import NetworkState

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(state: NetworkState, grads: dict, learning_rate: float) -> None:
    """One in-place update. Masked weights keep zero moments and stay zero."""
    state.adam_steps += 1
    t = state.adam_steps
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for name, p in state.params.items():
        g = grads[name]
        mask = state.masks.get(name)
        if mask is not None:
            g = g * mask
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= learning_rate * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        if mask is not None:
            p *= mask
