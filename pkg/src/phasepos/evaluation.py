"""Positioning/classification metrics and the cross-method benchmark harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .common import DataError
from .datasets import SampleSet
from .mle import GridSpec, estimate_position_batch, grid_for_budget, mle_flops
from .models import (decide_ambiguities, estimate_ambiguity_probs,
                     predict_position_aided, predict_position_direct)
from .scenario import Scenario, scenario_hash


def position_errors(estimates: np.ndarray, truths: np.ndarray) -> np.ndarray:
    estimates = np.asarray(estimates, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if estimates.shape != truths.shape:
        raise ValueError(f"shape mismatch {estimates.shape} vs {truths.shape}")
    if estimates.shape[0] == 0:
        raise ValueError("empty batch")
    return np.linalg.norm(estimates - truths, axis=1)


def rmse(estimates: np.ndarray, truths: np.ndarray) -> float:
    """Root of the mean squared Euclidean position error, meters."""
    return float(np.sqrt(np.mean(position_errors(estimates, truths) ** 2)))


def acc_element(k_hat: np.ndarray, k_true: np.ndarray) -> float:
    """Percent of individual ambiguities estimated correctly."""
    k_hat = np.asarray(k_hat)
    k_true = np.asarray(k_true)
    if k_hat.shape != k_true.shape:
        raise ValueError(f"shape mismatch {k_hat.shape} vs {k_true.shape}")
    return 100.0 * float(np.mean(k_hat == k_true))


def acc_overall(k_hat: np.ndarray, k_true: np.ndarray) -> float:
    """Percent of samples with every ambiguity correct; never exceeds acc_element."""
    k_hat = np.asarray(k_hat)
    k_true = np.asarray(k_true)
    if k_hat.shape != k_true.shape:
        raise ValueError(f"shape mismatch {k_hat.shape} vs {k_true.shape}")
    return 100.0 * float(np.mean(np.all(k_hat == k_true, axis=1)))


@dataclass(frozen=True, eq=False)
class Ecdf:
    """Right-continuous empirical CDF with plotting positions i/T."""
    values: np.ndarray  # sorted ascending, length T
    probs: np.ndarray   # i/T for i = 1..T

    @classmethod
    def from_errors(cls, errors: np.ndarray) -> "Ecdf":
        errors = np.asarray(errors, dtype=np.float64)
        if errors.size == 0:
            raise ValueError("empty error sample")
        v = np.sort(errors)
        t = v.size
        return cls(values=v, probs=np.arange(1, t + 1) / t)

    def percentile(self, p: float) -> float:
        """Smallest error whose ECDF level reaches p percent."""
        if not (0.0 < p <= 100.0):
            raise ValueError(f"percentile must be in (0, 100], got {p}")
        t = self.values.size
        i = int(np.ceil(p / 100.0 * t))
        return float(self.values[max(i, 1) - 1])

    def to_rows(self):
        return np.column_stack([self.values, self.probs])


def reduction_factor(mle_flops_equivalent: float, nn_flops: float) -> float:
    """How many times cheaper the network inference is than the matched search."""
    if mle_flops_equivalent <= 0 or nn_flops <= 0:
        raise ValueError("FLOP counts must be positive")
    return mle_flops_equivalent / nn_flops


@dataclass
class EvalReport:
    method: str
    frequency: float       # Hz
    power_dbm: float
    sample_count: int
    rmse: float            # m
    ecdf: Ecdf
    flops: int
    scenario_hash: str
    acc_element: float | None = None
    acc_overall: float | None = None
    reduction_factor: float | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "frequency_hz": self.frequency,
            "power_dbm": self.power_dbm,
            "sample_count": self.sample_count,
            "rmse_m": self.rmse,
            "p95_m": self.ecdf.percentile(95.0),
            "flops": self.flops,
            "scenario_hash": self.scenario_hash,
            "acc_element_pct": self.acc_element,
            "acc_overall_pct": self.acc_overall,
            "reduction_factor": self.reduction_factor,
            **self.extras,
        }


def compare(scenario: Scenario, test: SampleSet, sigma_inv: np.ndarray,
            frequency: float, power_dbm: float, *,
            mlp=None, aided=None, model_hashes: dict | None = None,
            nn_budgets: dict | None = None, performance_grid: int | None = None,
            include_oracle: bool = True, mle_steps: int = 100,
            max_mle_samples: int | None = None, wrap_residual: bool = True) -> list:
    """Run every configured method on the same test samples.

    `mlp` is (spec, state, flops); `aided` is (est_spec, est_state, cnn_spec,
    cnn_state, flops_estimated, flops_estimator_only). `nn_budgets` maps a
    method name to the FLOP budget the complexity-matched search must meet.
    `performance_grid` adds a full-accuracy search at that lattice size and
    sets every network's reduction factor against it. Models whose recorded
    scenario hash (in `model_hashes`) differs from the test set's are
    rejected. Grid searches fold residuals modulo the wavelength by default,
    which is the consistent likelihood for wrapped phase measurements.
    """
    s_hash = scenario_hash(scenario)
    if test.scenario_hash != s_hash:
        raise DataError("test set was generated for a different scenario")
    for name, h in (model_hashes or {}).items():
        if h != s_hash:
            raise DataError(f"model {name!r} belongs to a different scenario")

    truths = test.ue_positions
    reports = []

    def make_report(method, estimates, flops, **kw):
        errs = position_errors(estimates, truths[:estimates.shape[0]])
        reports.append(EvalReport(
            method=method, frequency=frequency, power_dbm=power_dbm,
            sample_count=estimates.shape[0],
            rmse=float(np.sqrt(np.mean(errs**2))),
            ecdf=Ecdf.from_errors(errs), flops=int(flops),
            scenario_hash=s_hash, **kw))

    perf_flops = None
    if performance_grid is not None:
        perf_flops = mle_flops(performance_grid, scenario.ap_count)

    if mlp is not None:
        spec, state, flops = mlp
        est = predict_position_direct(spec, state, test.differentials, scenario)
        rf = None if perf_flops is None else reduction_factor(perf_flops, flops)
        make_report("mlp", est, flops, reduction_factor=rf)

    if aided is not None:
        est_spec, est_state, cnn_spec, cnn_state, flops_est, flops_ae = aided
        probs = estimate_ambiguity_probs(est_spec, est_state, test.differentials, scenario)
        decision = decide_ambiguities(probs, scenario.q)
        a_e = acc_element(decision.decisions, test.true_k)
        a_o = acc_overall(decision.decisions, test.true_k)
        pos = predict_position_aided(cnn_spec, cnn_state, est_spec, est_state,
                                     test.differentials, scenario)
        rf = None if perf_flops is None else reduction_factor(perf_flops, flops_est)
        make_report("cnn_estimated", pos, flops_est, acc_element=a_e,
                    acc_overall=a_o, reduction_factor=rf)
        if include_oracle:
            pos_oracle = predict_position_aided(cnn_spec, cnn_state, est_spec, est_state,
                                                test.differentials, scenario,
                                                true_k=test.true_k)
            make_report("cnn_oracle", pos_oracle, flops_est, acc_element=100.0,
                        acc_overall=100.0, reduction_factor=rf)

    n_mle = test.count if max_mle_samples is None else min(test.count, max_mle_samples)
    deltas = test.differentials[:n_mle]
    for name, budget in (nn_budgets or {}).items():
        n_grid = grid_for_budget(budget, scenario.ap_count)
        grid = GridSpec(n_grid, scenario.area_side)
        pos, _ = estimate_position_batch(deltas, scenario, sigma_inv, grid,
                                         steps=mle_steps, wrap_residual=wrap_residual)
        make_report(f"mle_matched_{name}", pos, mle_flops(n_grid, scenario.ap_count),
                    extras={"n_grid": n_grid, "budget": budget})

    if performance_grid is not None:
        grid = GridSpec(performance_grid, scenario.area_side)
        pos, _ = estimate_position_batch(deltas, scenario, sigma_inv, grid,
                                         steps=mle_steps, wrap_residual=wrap_residual)
        make_report("mle_full", pos, perf_flops, extras={"n_grid": performance_grid})

    return reports


def rmse_vs_power_rows(reports: list) -> list:
    """CSV rows (x, y, method, frequency, power) with x = power, y = RMSE."""
    return [(r.power_dbm, r.rmse, r.method, r.frequency, r.power_dbm) for r in reports]


def ecdf_rows(reports: list) -> list:
    rows = []
    for r in reports:
        for x, y in r.ecdf.to_rows():
            rows.append((float(x), float(y), r.method, r.frequency, r.power_dbm))
    return rows


def write_csv(path, rows, header=("x", "y", "method", "frequency", "power")) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")
