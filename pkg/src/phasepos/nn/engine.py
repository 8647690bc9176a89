"""Forward/backward passes and loss functions.

Everything is float64 and batch-first. The forward pass returns a cache of
per-layer inputs and post-activations; the backward pass consumes it and
produces exact analytic gradients of (data loss + l2_coeff * sum(W^2)), with
masked weights receiving exactly zero gradient.
"""

from __future__ import annotations

import numpy as np

from ..common import ConfigError, NumericError
from .spec import Branch, Conv2D, Dense, Flatten, NetworkSpec, NetworkState

_PROB_FLOOR = 1e-12


def relu(z):
    return np.maximum(z, 0.0)


def softmax(z):
    """Row-wise softmax, shift-stabilized; rows sum to 1."""
    m = np.max(z, axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def _activate(z, activation: str):
    if activation == "relu":
        return relu(z)
    if activation == "linear":
        return z
    if activation == "softmax":
        return softmax(z)
    raise ConfigError(f"unknown activation {activation!r}")


def _dense_forward(layer: Dense, params, name, x, tally):
    y = _activate(x @ params[f"{name}.W"] + params[f"{name}.b"], layer.activation)
    if tally is not None:
        # n_i multiplies and n_i - 1 adds per output unit; bias/activation free
        tally.add(name, layer.out_dim * (2 * layer.in_dim - 1))
    return y


def _conv_patches(x, kernel_w: int):
    """(n, rows, cols) -> (n, out_w, rows*kernel_w) sliding windows."""
    win = np.lib.stride_tricks.sliding_window_view(x, kernel_w, axis=2)  # (n, r, out_w, kw)
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(x.shape[0], -1, x.shape[1] * kernel_w)


def forward(spec: NetworkSpec, state: NetworkState, x: np.ndarray,
            tally=None, keep_cache: bool = True):
    """Run the network; returns (outputs, cache). Branch outputs are a list."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != tuple(spec.in_shape):
        raise ConfigError(f"input shape {x.shape[1:]} does not match spec {spec.in_shape}")
    cache = [] if keep_cache else None
    h = x
    for i, layer in enumerate(spec.layers):
        name = f"L{i}"
        if isinstance(layer, Dense):
            y = _dense_forward(layer, state.params, name, h, tally)
            if keep_cache:
                cache.append(("dense", layer, name, h, y))
            h = y
        elif isinstance(layer, Conv2D):
            p = _conv_patches(h, layer.kernel[1])  # (n, out_w, rk)
            k = state.params[f"{name}.W"].reshape(-1, layer.filters)
            y = _activate(p @ k + state.params[f"{name}.b"], layer.activation)
            if tally is not None:
                # 2*rk - 1 multiply/adds per output element, filters * out_w elements
                rk = layer.kernel[0] * layer.kernel[1]
                tally.add(name, (2 * rk - 1) * layer.filters * layer.out_width)
            if keep_cache:
                cache.append(("conv", layer, name, (h.shape, p), y))
            h = y
        elif isinstance(layer, Flatten):
            y = h.reshape(h.shape[0], -1)
            if keep_cache:
                cache.append(("flatten", layer, name, h.shape, y))
            h = y
        elif isinstance(layer, Branch):
            t = h
            tail_cache = []
            for j, sub in enumerate(layer.shared_tail):
                sub_name = f"{name}.S{j}"
                y = _dense_forward(sub, state.params, sub_name, t, tally)
                tail_cache.append((sub, sub_name, t, y))
                t = y
            outs = []
            branch_caches = []
            for b, chain in enumerate(layer.branches):
                u = t
                bc = []
                for j, sub in enumerate(chain):
                    sub_name = f"{name}.B{b}.L{j}"
                    y = _dense_forward(sub, state.params, sub_name, u, tally)
                    bc.append((sub, sub_name, u, y))
                    u = y
                outs.append(u)
                branch_caches.append(bc)
            if keep_cache:
                cache.append(("branch", layer, name, tail_cache, branch_caches))
            h = outs
        else:
            raise ConfigError(f"unknown layer type {type(layer).__name__}")
    return h, cache


def predict(spec: NetworkSpec, state: NetworkState, x: np.ndarray):
    out, _ = forward(spec, state, x, keep_cache=False)
    return out


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over every entry of the batch."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ConfigError(f"mse shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def scce_loss(branch_probs, labels: np.ndarray) -> float:
    """Sparse categorical cross-entropy averaged over branches and batch.

    Per sample the loss is -(1/M) sum_m ln p_m[label_m]; probabilities are
    floored at 1e-12 before the log.
    """
    labels = np.asarray(labels)
    n, m = labels.shape
    if m != len(branch_probs):
        raise ConfigError(f"{len(branch_probs)} branches but {m} label columns")
    total = 0.0
    rows = np.arange(n)
    for j, p in enumerate(branch_probs):
        lab = labels[:, j]
        if np.any(lab < 0) or np.any(lab >= p.shape[1]):
            raise ConfigError(f"branch {j} label out of range [0, {p.shape[1]})")
        row_sums = np.sum(p, axis=1)
        if np.any(np.abs(row_sums - 1.0) > 1e-6):
            raise NumericError(f"branch {j} distributions do not sum to 1")
        total += -np.sum(np.log(np.maximum(p[rows, lab], _PROB_FLOOR)))
    return float(total / (n * m))


def l2_penalty(spec: NetworkSpec, state: NetworkState, l2_coeff: float) -> float:
    if l2_coeff == 0.0:
        return 0.0
    return float(l2_coeff * sum(np.sum(state.params[k] ** 2) for k in state.masks))


def total_loss(spec: NetworkSpec, state: NetworkState, outputs, targets,
               l2_coeff: float = 0.0) -> float:
    if spec.loss == "mse":
        data = mse_loss(outputs, targets)
    else:
        data = scce_loss(outputs, targets)
    return data + l2_penalty(spec, state, l2_coeff)


def _dense_backward(layer: Dense, params, masks, name, x, y, dy, grads, l2_coeff):
    """Returns gradient w.r.t. the layer input; fills grads for W and b."""
    if layer.activation == "relu":
        dz = dy * (y > 0)
    elif layer.activation == "linear":
        dz = dy
    else:
        # softmax heads are handled fused with the loss; dy already holds dL/dz
        dz = dy
    w_name, b_name = f"{name}.W", f"{name}.b"
    dw = x.T @ dz
    if l2_coeff:
        dw += 2.0 * l2_coeff * params[w_name]
    grads[w_name] = dw * masks[w_name]
    grads[b_name] = np.sum(dz, axis=0)
    return dz @ params[w_name].T


def backward(spec: NetworkSpec, state: NetworkState, cache, targets,
             l2_coeff: float = 0.0) -> dict:
    """Gradients of (data loss + L2) for every parameter, masked entries zero."""
    grads = {}
    params, masks = state.params, state.masks

    kind, layer, name, *rest = cache[-1]
    if spec.loss == "mse":
        if kind == "branch":
            raise ConfigError("mse loss is incompatible with a branch output")
        y = rest[-1]
        target = np.asarray(targets, dtype=np.float64)
        upstream = 2.0 * (y - target) / target.size
        idx_range = range(len(cache) - 1, -1, -1)
    else:
        # fused softmax + cross-entropy at the branch heads
        if kind != "branch":
            raise ConfigError("scce loss requires a branch output layer")
        tail_cache, branch_caches = rest
        labels = np.asarray(targets)
        n, m = labels.shape
        rows = np.arange(n)
        d_tail = None
        for b, bc in enumerate(branch_caches):
            head_sub, head_name, head_x, head_p = bc[-1]
            if head_sub.activation != "softmax":
                raise ConfigError("branch heads must end in softmax under scce")
            dz = head_p.copy()
            dz[rows, labels[:, b]] -= 1.0
            dz /= n * m
            d = _dense_backward(head_sub, params, masks, head_name, head_x, head_p,
                                dz, grads, l2_coeff)
            for sub, sub_name, sx, sy in reversed(bc[:-1]):
                d = _dense_backward(sub, params, masks, sub_name, sx, sy, d, grads, l2_coeff)
            d_tail = d if d_tail is None else d_tail + d
        for sub, sub_name, sx, sy in reversed(tail_cache):
            d_tail = _dense_backward(sub, params, masks, sub_name, sx, sy, d_tail,
                                     grads, l2_coeff)
        upstream = d_tail
        idx_range = range(len(cache) - 2, -1, -1)

    for i in idx_range:
        kind, layer, name, *rest = cache[i]
        if kind == "dense":
            x, y = rest
            upstream = _dense_backward(layer, params, masks, name, x, y, upstream, grads, l2_coeff)
        elif kind == "conv":
            (x_shape, p), y = rest
            if layer.activation == "relu":
                dz = upstream * (y > 0)
            else:
                dz = upstream
            w_name, b_name = f"{name}.W", f"{name}.b"
            kflat = params[w_name].reshape(-1, layer.filters)
            dk = np.einsum("nws,nwc->sc", p, dz)
            if l2_coeff:
                dk += 2.0 * l2_coeff * kflat
            grads[w_name] = (dk * masks[w_name].reshape(-1, layer.filters)).reshape(params[w_name].shape)
            grads[b_name] = np.sum(dz, axis=(0, 1))
            dp = dz @ kflat.T  # (n, out_w, rows*kw)
            dx = np.zeros(x_shape, dtype=np.float64)
            kw = layer.kernel[1]
            rows_k = layer.kernel[0]
            dpr = dp.reshape(dp.shape[0], dp.shape[1], rows_k, kw)
            for j in range(dp.shape[1]):
                dx[:, :, j:j + kw] += dpr[:, j]
            upstream = dx
        elif kind == "flatten":
            in_shape = rest[0]
            upstream = upstream.reshape(in_shape)
        else:
            raise ConfigError(f"cannot backprop through layer kind {kind!r}")
    return grads


def loss_and_grads(spec: NetworkSpec, state: NetworkState, x, targets,
                   l2_coeff: float = 0.0):
    """One combined pass; returns (total loss incl. L2, gradient dict)."""
    outputs, cache = forward(spec, state, x)
    loss = total_loss(spec, state, outputs, targets, l2_coeff)
    grads = backward(spec, state, cache, targets, l2_coeff)
    return loss, grads
