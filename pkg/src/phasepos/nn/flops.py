"""Inference FLOP accounting.

Closed-form totals use the common 2*n_i*n_o approximation per dense layer
(exact multiply/add count n_o*(2*n_i - 1) is available separately) and
(2*rk - 1)*filters*out_width per convolution (rk = kernel elements; 11 per
output element for a 2x3 kernel). Bias adds and activations are excluded.
Pruned networks scale by the keep fraction (1 - sparsity). Layers flagged
count_flops=False are left out of the closed-form total.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..common import ConfigError
from .spec import Branch, Conv2D, Dense, Flatten, NetworkSpec


class FlopTally:
    """Per-layer exact multiply/add counts recorded during a forward pass."""

    def __init__(self):
        self.per_layer = {}

    def add(self, name: str, count: int) -> None:
        self.per_layer[name] = self.per_layer.get(name, 0) + int(count)

    @property
    def total(self) -> int:
        return sum(self.per_layer.values())


def dense_flops(in_dim: int, out_dim: int, exact: bool = False) -> int:
    return out_dim * (2 * in_dim - 1) if exact else 2 * in_dim * out_dim


def conv_flops(layer: Conv2D, exact: bool = False) -> int:
    # 6 multiplies + 5 adds per output element for a 2x3 kernel, either way
    rk = layer.kernel[0] * layer.kernel[1]
    return (2 * rk - 1) * layer.filters * layer.out_width


@dataclass
class FlopReport:
    per_layer: dict = field(default_factory=dict)
    dense_total: int = 0
    conv_total: int = 0

    @property
    def total(self) -> int:
        return self.dense_total + self.conv_total


def flop_report(spec: NetworkSpec, exact: bool = False) -> FlopReport:
    """Unpruned per-layer counts, honoring each layer's count_flops flag."""
    report = FlopReport()

    def visit(name, layer):
        if isinstance(layer, Dense):
            if not layer.count_flops:
                return
            c = dense_flops(layer.in_dim, layer.out_dim, exact)
            report.per_layer[name] = c
            report.dense_total += c
        elif isinstance(layer, Conv2D):
            if not layer.count_flops:
                return
            c = conv_flops(layer, exact)
            report.per_layer[name] = c
            report.conv_total += c
        elif isinstance(layer, Flatten):
            pass
        else:
            raise ConfigError(f"cannot count FLOPs for {type(layer).__name__}")

    for i, layer in enumerate(spec.layers):
        base = f"L{i}"
        if isinstance(layer, Branch):
            for j, sub in enumerate(layer.shared_tail):
                visit(f"{base}.S{j}", sub)
            for b, chain in enumerate(layer.branches):
                for j, sub in enumerate(chain):
                    visit(f"{base}.B{b}.L{j}", sub)
        else:
            visit(base, layer)
    return report


def flop_count(spec: NetworkSpec, keep_fraction: float = 1.0, exact: bool = False) -> int:
    """Closed-form inference cost after pruning to the given keep fraction."""
    if not (0.0 < keep_fraction <= 1.0):
        raise ConfigError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    total = flop_report(spec, exact).total
    scaled = keep_fraction * total
    return int(round(scaled))
