"""Maximum-likelihood position estimation from wrapped differential phases.

The measurement model maps a candidate position x to the differentials the
array would report under zero noise:

    h_m(x) = -(lambda/2*pi) * (mod(-2*pi*d_m/lambda, 2*pi)
                               - mod(-2*pi*d_0/lambda, 2*pi)),

with d_i = ||x - x_ap,i||. The estimate minimizes the quadratic form

    f(x) = (delta - h(x))^T Sigma_inv (delta - h(x))

by exhaustive search over a uniform lattice followed by a fixed number of
gradient-descent steps. FLOPs are charged per lattice point as

    2*I^2 - 2*I - 1

((I-1) subtractions, I*(I-1) multiplications and the matching additions of
the quadratic form), i.e. a total of n_grid * (2*I^2 - 2*I - 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .common import ConfigError
from .scenario import Scenario

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class GridSpec:
    n_grid: int
    area_side: float = 10.0  # m

    def __post_init__(self):
        if self.n_grid < 1:
            raise ConfigError(f"n_grid must be positive, got {self.n_grid}")
        side = math.isqrt(self.n_grid)
        if side * side != self.n_grid:
            raise ConfigError(f"n_grid must be a perfect square, got {self.n_grid}")
        if not (self.area_side > 0):
            raise ConfigError(f"area_side must be positive, got {self.area_side}")

    @property
    def side(self) -> int:
        return math.isqrt(self.n_grid)

    def points(self) -> np.ndarray:
        """Lattice points (n_grid, 2), cell centers, x varying fastest.

        Linear index i maps to (ix, iy) = (i % side, i // side).
        """
        g = self.side
        h = self.area_side / g
        centers = (np.arange(g) + 0.5) * h
        xx, yy = np.meshgrid(centers, centers)  # row-major: y is the slow axis
        return np.column_stack([xx.ravel(), yy.ravel()])


@dataclass(frozen=True, eq=False)
class MleEstimate:
    position: np.ndarray          # (2,) m
    objective_value: float
    grid_argmin: np.ndarray       # (2,) m
    refinement_steps_used: int
    flops_charged: int
    objective_history: np.ndarray = field(default=None, repr=False)  # (steps+1,)


def h_model(x: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Modeled differentials for candidate positions.

    Accepts a single (2,) point or a batch (n, 2); returns (I-1,) or (n, I-1).
    Every component lies in (-lambda, lambda).
    """
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    lam = scenario.wavelength
    d = np.linalg.norm(pts[:, None, :] - scenario.ap_positions[None, :, :], axis=2)
    wrapped = np.mod(-TWO_PI * d / lam, TWO_PI)  # [0, 2*pi)
    h = -(lam / TWO_PI) * (wrapped[:, 1:] - wrapped[:, :1])
    return h[0] if np.asarray(x).ndim == 1 else h


def nll(delta: np.ndarray, x: np.ndarray, scenario: Scenario,
        sigma_inv: np.ndarray, wrap_residual: bool = False) -> float:
    """Quadratic objective (delta - h(x))^T Sigma_inv (delta - h(x)) >= 0."""
    r = _residual(delta, h_model(x, scenario), scenario.wavelength, wrap_residual)
    return float(r @ (sigma_inv @ r))


def _residual(delta, h, wavelength: float, wrap_residual: bool):
    r = delta - h
    if wrap_residual:
        # Fold each component into (-lambda/2, lambda/2]; off the acceptance path.
        r = r - wavelength * np.ceil(r / wavelength - 0.5)
    return r


def _nll_batch(residuals: np.ndarray, sigma_inv: np.ndarray) -> np.ndarray:
    """Quadratic form row-wise on (n, I-1) residuals."""
    return np.einsum("ij,ij->i", residuals @ sigma_inv, residuals)


def precompute_h_table(scenario: Scenario, grid: GridSpec) -> np.ndarray:
    """h(x) at every lattice point, (n_grid, I-1); reusable across samples."""
    return h_model(grid.points(), scenario)


def grid_search(delta: np.ndarray, scenario: Scenario, sigma_inv: np.ndarray,
                grid: GridSpec, h_table: np.ndarray | None = None,
                wrap_residual: bool = False, chunk: int = 65536):
    """Lattice point with minimal objective; ties go to the lowest linear index.

    Returns (point (2,), objective, linear_index, flops); flops follow the
    per-point closed form regardless of chunking.
    """
    if h_table is None:
        h_table = precompute_h_table(scenario, grid)
    best_val = np.inf
    best_idx = -1
    for start in range(0, grid.n_grid, chunk):
        r = _residual(delta[None, :], h_table[start:start + chunk],
                      scenario.wavelength, wrap_residual)
        vals = _nll_batch(r, sigma_inv)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val = float(vals[i])
            best_idx = start + i
    flops = mle_flops(grid.n_grid, scenario.ap_count)
    return grid.points()[best_idx], best_val, best_idx, flops


def _gradient(x: np.ndarray, delta: np.ndarray, scenario: Scenario,
              sigma_inv: np.ndarray, wrap_residual: bool):
    """Analytic gradient of the objective at x (mod treated as locally linear).

    With r = delta - h(x) and dh_m/dx = u_m - u_0 (u_i the unit vector from
    AP_i toward x), grad f = -2 * sum_m (u_m - u_0) [Sigma_inv r]_m; validated
    against central finite differences in the test suite.
    """
    diff = x[None, :] - scenario.ap_positions  # (I, 2)
    dist = np.linalg.norm(diff, axis=1)
    u = diff / dist[:, None]
    r = _residual(delta, h_model(x, scenario), scenario.wavelength, wrap_residual)
    sr = sigma_inv @ r
    jac = u[1:] - u[0]  # (I-1, 2)
    return -2.0 * (jac.T @ sr), float(r @ sr)


def refine(x0: np.ndarray, delta: np.ndarray, scenario: Scenario,
           sigma_inv: np.ndarray, steps: int = 100, initial_step: float = 0.1,
           max_halvings: int = 20, wrap_residual: bool = False,
           grid_argmin: np.ndarray | None = None, flops_charged: int = 0) -> MleEstimate:
    """Fixed-step-count descent with backtracking along -grad/||grad||.

    Runs exactly `steps` iterations; each accepts the first candidate (step,
    step/2, ..., down to `max_halvings` halvings) that strictly decreases the
    objective, else stays put. The objective sequence is non-increasing. If
    the gradient is non-finite (x sitting on an AP) the point is nudged by
    1e-6 m and the iteration retried.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    history = np.empty(steps + 1)
    g, f = _gradient(x, delta, scenario, sigma_inv, wrap_residual)
    history[0] = f
    for it in range(steps):
        if not np.all(np.isfinite(g)):
            x = x + 1e-6
            g, f = _gradient(x, delta, scenario, sigma_inv, wrap_residual)
        gnorm = float(np.linalg.norm(g))
        if gnorm == 0.0 or not np.isfinite(gnorm):
            history[it + 1] = f
            continue
        direction = -g / gnorm
        step = initial_step
        moved = False
        for _ in range(max_halvings + 1):
            cand = x + step * direction
            f_cand = nll(delta, cand, scenario, sigma_inv, wrap_residual)
            if f_cand < f:
                x = cand
                f = f_cand
                moved = True
                break
            step *= 0.5
        if moved:
            g, f = _gradient(x, delta, scenario, sigma_inv, wrap_residual)
        history[it + 1] = f
    return MleEstimate(
        position=x,
        objective_value=float(history[-1]),
        grid_argmin=np.asarray(grid_argmin if grid_argmin is not None else x0, dtype=np.float64),
        refinement_steps_used=steps,
        flops_charged=flops_charged,
        objective_history=history,
    )


def estimate_position(delta: np.ndarray, scenario: Scenario, sigma_inv: np.ndarray,
                      grid: GridSpec, steps: int = 100,
                      h_table: np.ndarray | None = None,
                      wrap_residual: bool = False) -> MleEstimate:
    """Grid search followed by refinement; never worse than the grid argmin."""
    point, _, _, flops = grid_search(delta, scenario, sigma_inv, grid,
                                     h_table=h_table, wrap_residual=wrap_residual)
    return refine(point, delta, scenario, sigma_inv, steps=steps,
                  wrap_residual=wrap_residual, grid_argmin=point, flops_charged=flops)


def estimate_position_batch(deltas: np.ndarray, scenario: Scenario,
                            sigma_inv: np.ndarray, grid: GridSpec,
                            steps: int = 100, wrap_residual: bool = False,
                            chunk: int = 65536) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized grid search + lockstep refinement over many samples.

    Returns (positions (n, 2), objectives (n,)). Matches per-sample
    estimate_position up to floating-point associativity.
    """
    deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    n = deltas.shape[0]
    lam = scenario.wavelength
    h_table = precompute_h_table(scenario, grid)
    pts = grid.points()

    best_val = np.full(n, np.inf)
    best_idx = np.zeros(n, dtype=np.int64)
    for start in range(0, grid.n_grid, chunk):
        block = h_table[start:start + chunk]  # (c, I-1)
        for s in range(n):
            r = _residual(deltas[s][None, :], block, lam, wrap_residual)
            vals = _nll_batch(r, sigma_inv)
            i = int(np.argmin(vals))
            if vals[i] < best_val[s]:
                best_val[s] = vals[i]
                best_idx[s] = start + i

    x = pts[best_idx].copy()  # (n, 2)

    def batch_objective(positions):
        r = _residual(deltas, h_model(positions, scenario), lam, wrap_residual)
        return _nll_batch(r, sigma_inv)

    def batch_gradient(positions):
        diff = positions[:, None, :] - scenario.ap_positions[None, :, :]  # (n, I, 2)
        dist = np.linalg.norm(diff, axis=2)
        u = diff / dist[..., None]
        r = _residual(deltas, h_model(positions, scenario), lam, wrap_residual)
        sr = r @ sigma_inv.T  # symmetric, equals (sigma_inv @ r_s) row-wise
        jac = u[:, 1:, :] - u[:, :1, :]  # (n, I-1, 2)
        return -2.0 * np.einsum("nmd,nm->nd", jac, sr)

    f = batch_objective(x)
    for _ in range(steps):
        g = batch_gradient(x)
        bad = ~np.all(np.isfinite(g), axis=1)
        if np.any(bad):
            x[bad] += 1e-6
            g = batch_gradient(x)
            f = batch_objective(x)
        gnorm = np.linalg.norm(g, axis=1)
        active = (gnorm > 0) & np.isfinite(gnorm)
        direction = np.zeros_like(g)
        direction[active] = -g[active] / gnorm[active, None]
        step = np.full(n, 0.1)
        pending = active.copy()
        for _ in range(21):  # initial try + 20 halvings
            if not np.any(pending):
                break
            cand = x + (step * pending)[:, None] * direction
            f_cand = batch_objective(cand)
            accept = pending & (f_cand < f)
            x[accept] = cand[accept]
            f[accept] = f_cand[accept]
            pending &= ~accept
            step[pending] *= 0.5
    return x, f


def mle_flops(n_grid: int, ap_count: int) -> int:
    """Total grid-search cost: n_grid * (2*I^2 - 2*I - 1)."""
    if n_grid < 1:
        raise ValueError(f"n_grid must be >= 1, got {n_grid}")
    if ap_count < 2:
        raise ValueError(f"ap_count must be >= 2, got {ap_count}")
    return n_grid * (2 * ap_count**2 - 2 * ap_count - 1)


def grid_for_budget(flop_budget: int, ap_count: int) -> int:
    """Smallest perfect-square lattice size whose cost covers the budget.

    n_grid = ceil(sqrt(budget / per_point))^2, per_point = 2*I^2 - 2*I - 1.
    """
    per_point = 2 * ap_count**2 - 2 * ap_count - 1
    if flop_budget < per_point:
        raise ValueError(f"budget {flop_budget} is below one grid point ({per_point})")
    # smallest integer side with side^2 * per_point >= budget, in exact arithmetic
    side = math.isqrt(flop_budget // per_point)
    while side * side * per_point < flop_budget:
        side += 1
    return side * side
