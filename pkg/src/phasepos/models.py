"""The three task networks and their closed-form inference costs.

* Direct positioner: dense chain (I-1) -> A -> 2A -> 4A -> 8A -> 4A -> 2A -> A -> 2,
  ReLU throughout except the linear 2D output; MSE. Its complexity figure
  covers the hidden chain only (168*A^2 before pruning), so the first and
  last layers are excluded from FLOP totals.
* Ambiguity estimator: shared trunk (I-1) -> 2B -> 4B -> 2B, then I-1 softmax
  branches 2B -> B -> Q_m; SCCE. Cost 32B^2 + (4B^2 + 4B)(I-1) + 2B*Q, all
  layers counted.
* Ambiguity-aided positioner: (2, I-1) input stacking [delta; k_hat], one
  valid 2x3 convolution with C filters, then dense 4D -> D -> 2; MSE. Cost
  11C(I-3) + 8CD(I-3) + 8D^2 + 4D, all layers counted.

Pruned costs multiply by the keep fraction; the aided pipeline additionally
pays the estimator's cost at the estimator's own keep fraction.

Every public entry point speaks physical units (meters).  Internally the
networks see dimensionless values: differentials are divided by the
wavelength and positions are mapped to [-1, 1] via the area half-side, which
keeps activations O(1) without touching the measurement model.  The
normalize/denormalize helpers are the single source of that convention; the
training pipeline uses the same helpers to build its target arrays.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .common import ConfigError, DataError, canonical_json
from .nn.spec import Branch, Conv2D, Dense, Flatten, NetworkSpec, NetworkState
from .nn.engine import predict, forward
from .nn.serialize import load_weights, save_weights
from .scenario import Scenario, scenario_hash


@dataclass(frozen=True)
class ModelHyperparams:
    A: int = 128  # positioner width base
    B: int = 128  # estimator width base
    C: int = 32   # conv filters
    D: int = 128  # aided-positioner dense base

    def __post_init__(self):
        for k in ("A", "B", "C", "D"):
            if getattr(self, k) < 1:
                raise ConfigError(f"hyperparameter {k} must be positive")

    def to_dict(self) -> dict:
        return {"A": self.A, "B": self.B, "C": self.C, "D": self.D}

    @classmethod
    def from_dict(cls, doc) -> "ModelHyperparams":
        return cls(A=doc["A"], B=doc["B"], C=doc["C"], D=doc["D"])


@dataclass(frozen=True, eq=False)
class AmbiguityDecision:
    probabilities: list    # per branch, (n, Q_m)
    decisions: np.ndarray  # (n, I-1) int


def build_mlp_positioner(a: int, ap_count: int) -> NetworkSpec:
    m = ap_count - 1
    widths = [a, 2 * a, 4 * a, 8 * a, 4 * a, 2 * a, a]
    layers = [Dense(m, widths[0], "relu", count_flops=False)]
    for w_in, w_out in zip(widths[:-1], widths[1:]):
        layers.append(Dense(w_in, w_out, "relu"))
    layers.append(Dense(widths[-1], 2, "linear", count_flops=False))
    return NetworkSpec(layers=tuple(layers), loss="mse", in_shape=(m,))


def mlp_flops(a: int, keep_fraction: float = 1.0) -> int:
    return int(round(keep_fraction * 168 * a * a))


def build_ambiguity_estimator(b: int, ap_count: int, q: np.ndarray) -> NetworkSpec:
    m = ap_count - 1
    q = np.asarray(q)
    if q.shape != (m,):
        raise ConfigError(f"expected {m} ambiguity bounds, got shape {q.shape}")
    trunk = [Dense(m, 2 * b, "relu"), Dense(2 * b, 4 * b, "relu"), Dense(4 * b, 2 * b, "relu")]
    branches = tuple(
        (Dense(2 * b, b, "relu"), Dense(b, int(2 * qm + 1), "softmax"))
        for qm in q
    )
    return NetworkSpec(layers=(*trunk, Branch(branches=branches)), loss="scce", in_shape=(m,))


def estimator_flops(b: int, ap_count: int, label_count: int, keep_fraction: float = 1.0) -> int:
    m = ap_count - 1
    total = 32 * b * b + (4 * b * b + 4 * b) * m + 2 * b * label_count
    return int(round(keep_fraction * total))


def build_cnn_positioner(c: int, d: int, ap_count: int) -> NetworkSpec:
    m = ap_count - 1
    if ap_count < 4:
        raise ConfigError("aided positioner needs at least 4 antennas")
    conv = Conv2D(in_shape=(2, m), filters=c, kernel=(2, 3), activation="relu")
    flat = conv.out_width * c
    layers = (
        conv,
        Flatten(),
        Dense(flat, 4 * d, "relu"),
        Dense(4 * d, d, "relu"),
        Dense(d, 2, "linear"),
    )
    return NetworkSpec(layers=layers, loss="mse", in_shape=(2, m))


def cnn_flops(c: int, d: int, ap_count: int, keep_fraction: float = 1.0) -> int:
    w = ap_count - 3
    total = 11 * c * w + 8 * c * d * w + 8 * d * d + 4 * d
    return int(round(keep_fraction * total))


def aided_flops(c: int, d: int, b: int, ap_count: int, label_count: int,
                cnn_keep: float, estimator_keep: float) -> int:
    return cnn_flops(c, d, ap_count, cnn_keep) + estimator_flops(
        b, ap_count, label_count, estimator_keep)


def normalize_features(delta: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Differential measurements in units of the wavelength (each in (-1, 1))."""
    return np.asarray(delta, dtype=np.float64) / scenario.wavelength


def normalize_positions(positions: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Map area coordinates onto [-1, 1]^2 around the area center."""
    half = scenario.area_side / 2.0
    return (np.asarray(positions, dtype=np.float64) - half) / half


def denormalize_positions(outputs: np.ndarray, scenario: Scenario) -> np.ndarray:
    half = scenario.area_side / 2.0
    return np.asarray(outputs, dtype=np.float64) * half + half


def encode_ambiguity_labels(k: np.ndarray, q: np.ndarray):
    """Map integers k_m in [-q_m, q_m] to class indices k_m + q_m.

    Wrap-boundary samples can carry |k_m| = q_m + 1; those are clamped to the
    nearest in-range label and counted, so callers can log the rate.
    """
    k = np.asarray(k)
    q = np.asarray(q)
    if np.any(np.abs(k) > q[None, :] + 1):
        raise DataError("ambiguity beyond its geometric bound by more than one")
    clipped = np.clip(k, -q[None, :], q[None, :])
    n_clamped = int(np.sum(clipped != k))
    return (clipped + q[None, :]).astype(np.int64), n_clamped


def decode_ambiguity_labels(labels: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.asarray(labels) - np.asarray(q)[None, :]


def estimate_ambiguity_probs(spec: NetworkSpec, state: NetworkState,
                             delta: np.ndarray, scenario: Scenario) -> list:
    x = normalize_features(np.atleast_2d(delta), scenario)
    probs, _ = forward(spec, state, x, keep_cache=False)
    return probs


def decide_ambiguities(probs, q: np.ndarray) -> AmbiguityDecision:
    """Per-branch argmax, mapped from class index back to an integer in [-q_m, q_m].

    np.argmax takes the first maximum, so exact ties resolve to the smallest
    label.
    """
    q = np.asarray(q)
    cols = [np.argmax(p, axis=1) - q[m] for m, p in enumerate(probs)]
    return AmbiguityDecision(probabilities=probs,
                             decisions=np.stack(cols, axis=1).astype(np.int64))


def stack_aided_input(delta: np.ndarray, k_hat: np.ndarray,
                      wavelength: float | None = None) -> np.ndarray:
    """(n, 2, I-1) CNN input: row 0 the differentials, row 1 the ambiguities.

    k_hat enters as raw integers by default; pass a wavelength to feed
    wavelength * k_hat in meters instead.
    """
    delta = np.atleast_2d(np.asarray(delta, dtype=np.float64))
    k = np.atleast_2d(np.asarray(k_hat, dtype=np.float64))
    if k.shape != delta.shape:
        raise ConfigError(f"delta shape {delta.shape} vs k shape {k.shape}")
    if wavelength is not None:
        k = k * wavelength
    return np.stack([delta, k], axis=1)


def predict_position_direct(spec: NetworkSpec, state: NetworkState,
                            delta: np.ndarray, scenario: Scenario) -> np.ndarray:
    x = normalize_features(np.atleast_2d(delta), scenario)
    return denormalize_positions(predict(spec, state, x), scenario)


def aided_input(delta: np.ndarray, k_hat: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Normalized CNN input: both rows in wavelength units.

    Row 0 is delta/lambda; row 1 the integer ambiguities, which are exactly
    the whole-wavelength part of the same quantity, so no further scaling is
    needed.
    """
    x = normalize_features(delta, scenario)
    return stack_aided_input(x, np.asarray(k_hat, dtype=np.float64))


def predict_position_aided(cnn_spec: NetworkSpec, cnn_state: NetworkState,
                           est_spec: NetworkSpec, est_state: NetworkState,
                           delta: np.ndarray, scenario: Scenario,
                           true_k: np.ndarray | None = None) -> np.ndarray:
    """Aided path: estimate (or take oracle) ambiguities, stack, position."""
    delta = np.atleast_2d(delta)
    if true_k is not None:
        k_hat = np.atleast_2d(true_k)
    else:
        probs = estimate_ambiguity_probs(est_spec, est_state, delta, scenario)
        k_hat = decide_ambiguities(probs, scenario.q).decisions
    x = aided_input(delta, k_hat, scenario)
    return denormalize_positions(predict(cnn_spec, cnn_state, x), scenario)


# --- bundles -----------------------------------------------------------------

def save_aided_bundle(directory, scenario: Scenario, hyper: ModelHyperparams,
                      est_spec, est_state, cnn_spec, cnn_state,
                      meta: dict | None = None) -> None:
    """One loadable unit: estimator + positioner + scenario hash + hyperparams."""
    os.makedirs(directory, exist_ok=True)
    doc = {
        "scenario_hash": scenario_hash(scenario),
        "hyperparams": hyper.to_dict(),
        "q": [int(v) for v in scenario.q],
        "meta": meta or {},
    }
    with open(os.path.join(directory, "bundle.json"), "w", encoding="utf-8") as f:
        f.write(canonical_json(doc) + "\n")
    save_weights(os.path.join(directory, "estimator.weights"), est_spec, est_state,
                 extra={"scenario_hash": doc["scenario_hash"]})
    save_weights(os.path.join(directory, "positioner.weights"), cnn_spec, cnn_state,
                 extra={"scenario_hash": doc["scenario_hash"]})


def load_aided_bundle(directory):
    """Returns (est_spec, est_state, cnn_spec, cnn_state, bundle doc)."""
    meta_path = os.path.join(directory, "bundle.json")
    if not os.path.exists(meta_path):
        raise DataError(f"missing bundle manifest {meta_path}")
    with open(meta_path, encoding="utf-8") as f:
        doc = json.load(f)
    est_spec, est_state, est_header = load_weights(os.path.join(directory, "estimator.weights"))
    cnn_spec, cnn_state, cnn_header = load_weights(os.path.join(directory, "positioner.weights"))
    for header, name in ((est_header, "estimator"), (cnn_header, "positioner")):
        if header["extra"].get("scenario_hash") != doc["scenario_hash"]:
            raise DataError(f"{name} weights belong to a different scenario")
    return est_spec, est_state, cnn_spec, cnn_state, doc
