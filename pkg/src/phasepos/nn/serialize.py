"""Weights/checkpoint files.

Layout: one UTF-8 JSON header line, then per-parameter float64 little-endian
blocks in the header's declared order, then one packed bitset per prunable
weight array (masks), then optionally Adam first/second-moment blocks for
resumable checkpoints. Given identical state the bytes are identical.
"""

from __future__ import annotations

import json

import numpy as np

from ..common import DataError, canonical_json
from .spec import NetworkSpec, NetworkState, init_state
from .training import TrainConfig, TrainHistory

_MAGIC = "phasepos-weights-v1"


def _write_block(f, arr: np.ndarray) -> None:
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_block(f, shape) -> np.ndarray:
    n = int(np.prod(shape)) if shape else 1
    buf = f.read(n * 8)
    if len(buf) != n * 8:
        raise DataError("truncated parameter block")
    return np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)


def save_weights(path, spec: NetworkSpec, state: NetworkState, *,
                 seed: int | None = None, train_config: TrainConfig | None = None,
                 epoch: int | None = None, history: TrainHistory | None = None,
                 extra: dict | None = None, include_adam: bool = False) -> None:
    param_names = list(state.params)
    mask_names = list(state.masks)
    header = {
        "magic": _MAGIC,
        "spec": spec.to_dict(),
        "seed": seed,
        "train_config": train_config.to_dict() if train_config else None,
        "epoch": epoch,
        "params": [[name, list(state.params[name].shape)] for name in param_names],
        "masks": mask_names,
        "adam": bool(include_adam),
        "adam_steps": state.adam_steps if include_adam else None,
        "history": history.to_rows() if history else None,
        "extra": extra or {},
    }
    with open(path, "wb") as f:
        f.write(canonical_json(header).encode("utf-8") + b"\n")
        for name in param_names:
            _write_block(f, state.params[name])
        for name in mask_names:
            bits = np.packbits(state.masks[name].ravel().astype(np.uint8))
            f.write(bits.tobytes())
        if include_adam:
            for name in param_names:
                _write_block(f, state.adam_m[name])
            for name in param_names:
                _write_block(f, state.adam_v[name])


def load_weights(path):
    """Returns (spec, state, header). Masked weights are re-zeroed on load."""
    with open(path, "rb") as f:
        try:
            header = json.loads(f.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"bad weights header in {path}: {e}") from e
        if header.get("magic") != _MAGIC:
            raise DataError(f"{path} is not a weights file")
        spec = NetworkSpec.from_dict(header["spec"])
        state = init_state(spec, np.random.default_rng(0))
        declared = {name: tuple(shape) for name, shape in header["params"]}
        expected = {name: arr.shape for name, arr in state.params.items()}
        if declared != expected:
            raise DataError(f"{path}: parameter table does not match its spec")
        for name, _ in header["params"]:
            state.params[name] = _read_block(f, declared[name])
        for name in header["masks"]:
            if name not in state.masks:
                raise DataError(f"{path}: unexpected mask {name}")
            size = state.masks[name].size
            buf = f.read((size + 7) // 8)
            if len(buf) != (size + 7) // 8:
                raise DataError(f"{path}: truncated mask block {name}")
            bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=size)
            state.masks[name] = bits.reshape(state.masks[name].shape).astype(np.float64)
            state.params[name] = state.params[name] * state.masks[name]
        if header.get("adam"):
            for name, _ in header["params"]:
                state.adam_m[name] = _read_block(f, declared[name])
            for name, _ in header["params"]:
                state.adam_v[name] = _read_block(f, declared[name])
            state.adam_steps = int(header["adam_steps"])
    return spec, state, header


def history_from_header(header) -> TrainHistory:
    hist = TrainHistory()
    for epoch, train_loss, val_loss in header.get("history") or []:
        hist.epochs.append(int(epoch))
        hist.train_losses.append(float(train_loss))
        hist.val_losses.append(float(val_loss))
    return hist


def save_history_csv(path, history: TrainHistory) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,train_loss,val_loss\n")
        for epoch, train_loss, val_loss in history.to_rows():
            f.write(f"{epoch},{train_loss:.17g},{val_loss:.17g}\n")
