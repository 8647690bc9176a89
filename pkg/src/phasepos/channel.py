"""Carrier-phase observation model over free-space uplinks.

Each AP i observes the wrapped phase

    r_i = wrap(-2*pi*d_i/lambda + theta + n_i),    n_i ~ N(0, sigma_i^2),

where d_i is the UE-AP distance and theta a common UE/network phase offset.
Differencing against the reference AP 0 cancels theta:

    delta_m = -(lambda/2*pi) (r_m - r_0) = Delta_m + k_m*lambda + w_m,

with Delta_m = d_m - d_0, integer ambiguity k_m, and noise w_m whose
covariance is

    Sigma_diff = (lambda^2 N0 / (8 pi^2 E)) * (D + 1 1^T / rho_0^2),
    D_mm = 1 / rho_m^2.

The per-AP phase noise is set to sigma_i^2 = N0 / (2 E rho_i^2), which makes
the simulated differential noise attain Sigma_diff with equality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .common import NumericError
from .scenario import Scenario

TWO_PI = 2.0 * np.pi

# Tolerance on the noiseless identity delta_m = Delta_m + k_m * lambda (meters).
_INTEGRALITY_TOL = 1e-9


@dataclass(frozen=True)
class LinkBudget:
    transmit_power: float        # W
    bandwidth: float = 180e3     # Hz
    noise_figure_db: float = 13.0

    def __post_init__(self):
        if not (self.transmit_power > 0):
            raise ValueError(f"transmit_power must be positive, got {self.transmit_power}")
        if not (self.bandwidth > 0):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    @classmethod
    def from_dbm(cls, power_dbm: float, bandwidth: float = 180e3,
                 noise_figure_db: float = 13.0) -> "LinkBudget":
        return cls(1e-3 * 10.0 ** (power_dbm / 10.0), bandwidth, noise_figure_db)

    @property
    def symbol_energy(self) -> float:
        """E = P/W, joules."""
        return self.transmit_power / self.bandwidth

    @property
    def noise_psd(self) -> float:
        """N0 in W/Hz: -174 dBm/Hz thermal floor plus the receiver noise figure."""
        return 1e-3 * 10.0 ** ((-174.0 + self.noise_figure_db) / 10.0)

    def to_dict(self) -> dict:
        return {
            "transmit_power_w": self.transmit_power,
            "bandwidth_hz": self.bandwidth,
            "noise_figure_db": self.noise_figure_db,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LinkBudget":
        return cls(doc["transmit_power_w"], doc["bandwidth_hz"], doc["noise_figure_db"])


@dataclass(frozen=True, eq=False)
class PhaseSample:
    ue_position: np.ndarray   # (2,) m
    theta: float              # rad, common phase offset
    distances: np.ndarray     # (I,) m
    path_gains: np.ndarray    # (I,) amplitude gain rho_i
    phases: np.ndarray        # (I,) rad, wrapped to (-pi, pi]
    differentials: np.ndarray  # (I-1,) m
    true_k: np.ndarray        # (I-1,) int32, from the noiseless wrapped phases
    noise_sigmas: np.ndarray  # (I,) rad


@dataclass(frozen=True, eq=False)
class PhaseBatch:
    ue_positions: np.ndarray   # (n, 2)
    differentials: np.ndarray  # (n, I-1)
    true_k: np.ndarray         # (n, I-1) int32
    thetas: np.ndarray         # (n,)
    distances: np.ndarray      # (n, I)
    path_gains: np.ndarray     # (n, I)
    phases: np.ndarray         # (n, I)
    noise_sigmas: np.ndarray   # (n, I)


def path_loss(distance, wavelength: float):
    """Free-space amplitude gain rho = lambda / (4 pi d). Accepts scalars or arrays."""
    d = np.asarray(distance, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("path_loss requires strictly positive distance")
    rho = wavelength / (4.0 * np.pi * d)
    return float(rho) if np.isscalar(distance) else rho


def phase_noise_sigma(budget: LinkBudget, rho):
    """Per-AP phase noise std dev: sigma^2 = N0 / (2 E rho^2)."""
    r = np.asarray(rho, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("phase_noise_sigma requires rho > 0")
    sigma = np.sqrt(budget.noise_psd / (2.0 * budget.symbol_energy * r**2))
    return float(sigma) if np.isscalar(rho) else sigma


def wrap_phase(x):
    """Wrap angles into (-pi, pi]."""
    return np.asarray(x) - TWO_PI * np.ceil((np.asarray(x) - np.pi) / TWO_PI)


def differential(phases: np.ndarray, wavelength: float) -> np.ndarray:
    """delta_m = -(lambda / 2 pi)(r_m - r_0); theta and any common term cancel.

    Works on a single (I,) vector or a batch (n, I).
    """
    r = np.asarray(phases, dtype=np.float64)
    if r.ndim == 1:
        return -(wavelength / TWO_PI) * (r[1:] - r[0])
    return -(wavelength / TWO_PI) * (r[:, 1:] - r[:, :1])


def covariance(scenario: Scenario, budget: LinkBudget, path_gains: np.ndarray) -> np.ndarray:
    """Differential noise covariance (I-1)x(I-1), meters^2.

    Sigma = s * (diag(1/rho_m^2) + 1 1^T / rho_0^2), s = lambda^2 N0 / (8 pi^2 E).
    Symmetric positive definite for any positive gains.
    """
    rho = np.asarray(path_gains, dtype=np.float64)
    if np.any(rho <= 0):
        raise ValueError("covariance requires all path gains > 0")
    scale = scenario.wavelength**2 * budget.noise_psd / (8.0 * np.pi**2 * budget.symbol_energy)
    sigma = scale * (np.diag(1.0 / rho[1:] ** 2) + 1.0 / rho[0] ** 2)
    if not np.all(np.isfinite(sigma)):
        raise NumericError("non-finite differential covariance")
    return sigma


def simulate_batch(scenario: Scenario, budget: LinkBudget, ue_positions: np.ndarray,
                   rng: np.random.Generator, with_noise: bool = True,
                   thetas: np.ndarray | None = None) -> PhaseBatch:
    """Simulate wrapped phase observations for a batch of UE positions.

    True ambiguities are extracted from the noiseless wrapped phases, so that
    delta_noiseless = Delta + k * lambda holds to 1e-9 m; labels never depend
    on the noise realization.
    """
    ue = np.atleast_2d(np.asarray(ue_positions, dtype=np.float64))
    n = ue.shape[0]
    lam = scenario.wavelength

    d = np.linalg.norm(ue[:, None, :] - scenario.ap_positions[None, :, :], axis=2)  # (n, I)
    rho = path_loss(d, lam)
    sigma = phase_noise_sigma(budget, rho)

    if thetas is None:
        thetas = rng.uniform(0.0, TWO_PI, size=n)
    else:
        thetas = np.broadcast_to(np.asarray(thetas, dtype=np.float64), (n,)).copy()

    phase_clean = -TWO_PI * d / lam + thetas[:, None]
    if with_noise:
        phases = wrap_phase(phase_clean + rng.standard_normal((n, d.shape[1])) * sigma)
    else:
        phases = wrap_phase(phase_clean)

    delta = differential(phases, lam)

    # Labels from the noiseless wrapped phases.
    delta_clean = differential(wrap_phase(phase_clean), lam)
    big_delta = d[:, 1:] - d[:, :1]
    k_float = (delta_clean - big_delta) / lam
    k = np.rint(k_float).astype(np.int32)
    err = np.abs(delta_clean - big_delta - k * lam)
    if np.max(err) > _INTEGRALITY_TOL:
        raise NumericError(f"noiseless differential off the integer lattice by {np.max(err):.3e} m")
    if np.any(np.abs(k) > scenario.q[None, :] + 1):
        raise NumericError("true ambiguity exceeded its geometric bound by more than one")

    return PhaseBatch(
        ue_positions=ue,
        differentials=delta,
        true_k=k,
        thetas=thetas,
        distances=d,
        path_gains=rho,
        phases=phases,
        noise_sigmas=sigma,
    )


def simulate_sample(scenario: Scenario, budget: LinkBudget, ue_position: np.ndarray,
                    rng: np.random.Generator, with_noise: bool = True,
                    theta: float | None = None) -> PhaseSample:
    """Single Monte-Carlo draw; see simulate_batch for the conventions."""
    thetas = None if theta is None else np.array([theta], dtype=np.float64)
    b = simulate_batch(scenario, budget, np.asarray(ue_position)[None, :], rng,
                       with_noise=with_noise, thetas=thetas)
    return PhaseSample(
        ue_position=b.ue_positions[0],
        theta=float(b.thetas[0]),
        distances=b.distances[0],
        path_gains=b.path_gains[0],
        phases=b.phases[0],
        differentials=b.differentials[0],
        true_k=b.true_k[0],
        noise_sigmas=b.noise_sigmas[0],
    )
