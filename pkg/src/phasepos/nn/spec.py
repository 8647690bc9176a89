"""Network structure descriptors and parameter initialization.

A network is a flat chain of layers; the multi-head classifier ends in a
Branch layer that fans a shared representation out into per-head dense
chains. Parameters are addressed by stable string names ("L0.W", "L2.b",
"L3.B4.L1.W", ...) in a deterministic enumeration order, which fixes both
initialization draws and the serialized layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..common import ConfigError

_ACTIVATIONS = ("relu", "linear", "softmax")


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int
    activation: str = "relu"
    # Included in closed-form FLOP totals? The positioner's complexity figure
    # covers its hidden chain only, so its first/last layers opt out.
    count_flops: bool = True

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"dense dims must be positive, got {self.in_dim}->{self.out_dim}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    def out_shape(self, in_shape):
        if in_shape != (self.in_dim,):
            raise ConfigError(f"dense expects shape ({self.in_dim},), got {in_shape}")
        return (self.out_dim,)

    def param_shapes(self):
        return {"W": (self.in_dim, self.out_dim), "b": (self.out_dim,)}


@dataclass(frozen=True)
class Conv2D:
    in_shape: tuple  # (rows, cols), e.g. (2, I-1)
    filters: int
    kernel: tuple = (2, 3)
    stride: int = 1
    activation: str = "relu"
    count_flops: bool = True

    def __post_init__(self):
        if self.filters < 1:
            raise ConfigError(f"filters must be positive, got {self.filters}")
        if self.stride != 1:
            raise ConfigError("only stride 1 is supported")
        if self.kernel[0] != self.in_shape[0]:
            raise ConfigError("kernel height must equal input height (valid conv, output height 1)")
        if self.kernel[1] > self.in_shape[1]:
            raise ConfigError("kernel wider than input")
        if self.activation not in ("relu", "linear"):
            raise ConfigError(f"unsupported conv activation {self.activation!r}")

    @property
    def out_width(self) -> int:
        return self.in_shape[1] - self.kernel[1] + 1

    def out_shape(self, in_shape):
        if tuple(in_shape) != tuple(self.in_shape):
            raise ConfigError(f"conv expects shape {self.in_shape}, got {in_shape}")
        return (self.out_width, self.filters)

    def param_shapes(self):
        return {"W": (*self.kernel, self.filters), "b": (self.filters,)}


@dataclass(frozen=True)
class Flatten:
    def out_shape(self, in_shape):
        n = 1
        for s in in_shape:
            n *= s
        return (n,)

    def param_shapes(self):
        return {}


@dataclass(frozen=True)
class Branch:
    """Fan-out into parallel dense chains after an optional shared tail."""
    branches: tuple  # tuple of tuples of Dense
    shared_tail: tuple = ()

    def __post_init__(self):
        if not self.branches:
            raise ConfigError("branch layer needs at least one branch")

    def out_shape(self, in_shape):
        shape = in_shape
        for layer in self.shared_tail:
            shape = layer.out_shape(shape)
        outs = []
        for chain in self.branches:
            s = shape
            for layer in chain:
                s = layer.out_shape(s)
            outs.append(s)
        return tuple(outs)

    def param_shapes(self):
        return {}


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    loss: str  # "mse" | "scce"
    in_shape: tuple

    def __post_init__(self):
        if self.loss not in ("mse", "scce"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        shape = tuple(self.in_shape)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Branch) and i != len(self.layers) - 1:
                raise ConfigError("branch fan-out must be the final layer")
            shape = layer.out_shape(shape)
        out = shape
        has_branch = any(isinstance(l, Branch) for l in self.layers)
        if self.loss == "scce" and not has_branch:
            raise ConfigError("scce loss requires a branch fan-out output")
        if self.loss == "mse" and has_branch:
            raise ConfigError("mse loss is incompatible with a branch output")
        for name, layer in self.parametric_layers():
            if isinstance(layer, Dense) and layer.activation == "softmax":
                if self.loss != "scce" or ".B" not in name:
                    raise ConfigError("softmax is only supported on branch heads with scce loss")
        object.__setattr__(self, "out_shape", out)

    def parametric_layers(self):
        """Yield (name, layer) for every weighted layer in enumeration order."""
        for i, layer in enumerate(self.layers):
            base = f"L{i}"
            if isinstance(layer, Branch):
                for j, sub in enumerate(layer.shared_tail):
                    yield f"{base}.S{j}", sub
                for b, chain in enumerate(layer.branches):
                    for j, sub in enumerate(chain):
                        yield f"{base}.B{b}.L{j}", sub
            elif layer.param_shapes():
                yield base, layer

    def param_entries(self):
        """Yield (param_name, layer, kind, shape); kind is 'W' or 'b'."""
        for name, layer in self.parametric_layers():
            for kind, shape in layer.param_shapes().items():
                yield f"{name}.{kind}", layer, kind, shape

    def to_dict(self) -> dict:
        return {"loss": self.loss, "in_shape": list(self.in_shape),
                "layers": [_layer_to_dict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkSpec":
        layers = tuple(_layer_from_dict(d) for d in doc["layers"])
        return cls(layers=layers, loss=doc["loss"], in_shape=tuple(doc["in_shape"]))


def _layer_to_dict(layer) -> dict:
    if isinstance(layer, Dense):
        return {"kind": "dense", "in": layer.in_dim, "out": layer.out_dim,
                "activation": layer.activation, "count_flops": layer.count_flops}
    if isinstance(layer, Conv2D):
        return {"kind": "conv2d", "in_shape": list(layer.in_shape), "filters": layer.filters,
                "kernel": list(layer.kernel), "stride": layer.stride,
                "activation": layer.activation, "count_flops": layer.count_flops}
    if isinstance(layer, Flatten):
        return {"kind": "flatten"}
    if isinstance(layer, Branch):
        return {"kind": "branch",
                "shared_tail": [_layer_to_dict(l) for l in layer.shared_tail],
                "branches": [[_layer_to_dict(l) for l in chain] for chain in layer.branches]}
    raise ConfigError(f"unknown layer type {type(layer).__name__}")


def _layer_from_dict(doc: dict):
    kind = doc["kind"]
    if kind == "dense":
        return Dense(doc["in"], doc["out"], doc["activation"], doc.get("count_flops", True))
    if kind == "conv2d":
        return Conv2D(tuple(doc["in_shape"]), doc["filters"], tuple(doc["kernel"]),
                      doc["stride"], doc["activation"], doc.get("count_flops", True))
    if kind == "flatten":
        return Flatten()
    if kind == "branch":
        return Branch(
            branches=tuple(tuple(_layer_from_dict(l) for l in chain)
                           for chain in doc["branches"]),
            shared_tail=tuple(_layer_from_dict(l) for l in doc["shared_tail"]),
        )
    raise ConfigError(f"unknown layer kind {kind!r}")


@dataclass
class NetworkState:
    params: dict
    masks: dict      # weight params only; 0/1 float arrays, same shapes
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    adam_steps: int = 0

    def copy(self) -> "NetworkState":
        return NetworkState(
            params={k: v.copy() for k, v in self.params.items()},
            masks={k: v.copy() for k, v in self.masks.items()},
            adam_m={k: v.copy() for k, v in self.adam_m.items()},
            adam_v={k: v.copy() for k, v in self.adam_v.items()},
            adam_steps=self.adam_steps,
        )


def _fan(layer, kind: str, shape) -> tuple:
    if isinstance(layer, Conv2D):
        receptive = layer.kernel[0] * layer.kernel[1]
        return receptive, layer.filters
    return shape[0], shape[1]


def init_state(spec: NetworkSpec, rng: np.random.Generator) -> NetworkState:
    """He-uniform (fan-in) for ReLU layers, Glorot-uniform elsewhere; zero biases."""
    params = {}
    masks = {}
    adam_m = {}
    adam_v = {}
    for name, layer, kind, shape in spec.param_entries():
        if kind == "b":
            params[name] = np.zeros(shape, dtype=np.float64)
        else:
            fan_in, fan_out = _fan(layer, kind, shape)
            if layer.activation == "relu":
                limit = np.sqrt(6.0 / fan_in)
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape)
            masks[name] = np.ones(shape, dtype=np.float64)
        adam_m[name] = np.zeros(shape, dtype=np.float64)
        adam_v[name] = np.zeros(shape, dtype=np.float64)
    return NetworkState(params=params, masks=masks, adam_m=adam_m, adam_v=adam_v)
