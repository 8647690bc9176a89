"""Cell-free deployment geometry.

A scenario is a square evaluation area with I phase-synchronized antenna
points (APs) at known positions, a carrier wavelength, and the geometric
bounds q_m on the differential integer ambiguities: for each non-reference
AP m, |k_m| <= q_m = floor(|x_ap,m - x_ap,0| / lambda). The per-pair label
count is Q_m = 2 q_m + 1 and Q = sum_m Q_m.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .common import SPEED_OF_LIGHT, ConfigError, DataError, canonical_json, sha256_hex

_MAX_REJECTION_DRAWS = 10**6


@dataclass(frozen=True)
class ScenarioConfig:
    area_side: float = 10.0          # m, square side (default 100 m^2 area)
    ap_count: int = 20
    carrier_frequency: float = 800e6  # Hz
    min_ue_ap_distance: float = 0.1   # m, keeps the path-loss singularity at d=0 out of reach
    rng_seed: int = 0

    def validate(self) -> None:
        if not (self.area_side > 0):
            raise ConfigError(f"area_side must be positive, got {self.area_side}")
        if self.ap_count < 2:
            raise ConfigError(f"ap_count must be >= 2, got {self.ap_count}")
        if not (self.carrier_frequency > 0):
            raise ConfigError(f"carrier_frequency must be positive, got {self.carrier_frequency}")
        if self.min_ue_ap_distance < 0:
            raise ConfigError(f"min_ue_ap_distance must be >= 0, got {self.min_ue_ap_distance}")


@dataclass(frozen=True, eq=False)
class Scenario:
    area_side: float
    ap_positions: np.ndarray      # (I, 2) m
    carrier_frequency: float      # Hz
    wavelength: float             # m
    q: np.ndarray                 # (I-1,) int64, per-pair ambiguity bound
    label_count: int              # Q = sum(2 q_m + 1)
    seed: int
    reference_ap_index: int = 0   # fixed; differential measurements are taken against AP 0

    @property
    def ap_count(self) -> int:
        return self.ap_positions.shape[0]


def ambiguity_bounds(ap_positions: np.ndarray, wavelength: float,
                     reference_index: int = 0) -> np.ndarray:
    """q_m = floor(|x_ap,m - x_ap,0| / lambda) for every non-reference AP."""
    ref = ap_positions[reference_index]
    others = np.delete(ap_positions, reference_index, axis=0)
    dists = np.linalg.norm(others - ref, axis=1)
    return np.floor(dists / wavelength).astype(np.int64)


def generate_scenario(cfg: ScenarioConfig, rng: np.random.Generator) -> Scenario:
    """Draw I AP positions uniformly over the square and derive wavelength and bounds."""
    cfg.validate()
    positions = rng.uniform(0.0, cfg.area_side, size=(cfg.ap_count, 2))
    wavelength = SPEED_OF_LIGHT / cfg.carrier_frequency
    q = ambiguity_bounds(positions, wavelength)
    return Scenario(
        area_side=cfg.area_side,
        ap_positions=positions,
        carrier_frequency=cfg.carrier_frequency,
        wavelength=wavelength,
        q=q,
        label_count=int(np.sum(2 * q + 1)),
        seed=cfg.rng_seed,
    )


def sample_ue(scenario: Scenario, rng: np.random.Generator,
              min_distance: float = 0.1) -> np.ndarray:
    """One UE position, uniform over the area, redrawn while any AP is closer
    than min_distance."""
    for _ in range(_MAX_REJECTION_DRAWS):
        point = rng.uniform(0.0, scenario.area_side, size=2)
        d = np.linalg.norm(scenario.ap_positions - point, axis=1)
        if np.all(d >= min_distance):
            return point
    raise ConfigError(
        f"UE rejection sampling exceeded {_MAX_REJECTION_DRAWS} draws; "
        f"min_distance={min_distance} is infeasible for this geometry"
    )


def sample_ue_batch(scenario: Scenario, count: int, rng: np.random.Generator,
                    min_distance: float = 0.1) -> np.ndarray:
    """Vectorized rejection sampling of `count` UE positions."""
    points = rng.uniform(0.0, scenario.area_side, size=(count, 2))
    total_draws = count
    while True:
        d = np.linalg.norm(points[:, None, :] - scenario.ap_positions[None, :, :], axis=2)
        bad = np.where(np.any(d < min_distance, axis=1))[0]
        if bad.size == 0:
            return points
        total_draws += bad.size
        if total_draws > _MAX_REJECTION_DRAWS + count:
            raise ConfigError(
                f"UE rejection sampling exceeded {_MAX_REJECTION_DRAWS} draws; "
                f"min_distance={min_distance} is infeasible for this geometry"
            )
        points[bad] = rng.uniform(0.0, scenario.area_side, size=(bad.size, 2))


def _canonical_dict(scenario: Scenario) -> dict:
    return {
        "area_side": scenario.area_side,
        "ap_positions": [[float(x), float(y)] for x, y in scenario.ap_positions],
        "carrier_frequency": scenario.carrier_frequency,
        "seed": scenario.seed,
    }


def scenario_hash(scenario: Scenario) -> str:
    return sha256_hex(canonical_json(_canonical_dict(scenario)))


def scenario_to_json(scenario: Scenario) -> str:
    doc = _canonical_dict(scenario)
    doc["reference_ap_index"] = scenario.reference_ap_index
    doc["q"] = [int(v) for v in scenario.q]
    doc["label_count"] = scenario.label_count
    return json.dumps(doc, indent=2)


def scenario_from_json(text: str) -> Scenario:
    """Rebuild a scenario, recomputing q/Q and verifying them against the stored values."""
    doc = json.loads(text)
    positions = np.asarray(doc["ap_positions"], dtype=np.float64)
    wavelength = SPEED_OF_LIGHT / doc["carrier_frequency"]
    q = ambiguity_bounds(positions, wavelength)
    label_count = int(np.sum(2 * q + 1))
    if "q" in doc and list(map(int, doc["q"])) != [int(v) for v in q]:
        raise DataError("stored ambiguity bounds q do not match the AP geometry")
    if "label_count" in doc and int(doc["label_count"]) != label_count:
        raise DataError("stored label count Q does not match the AP geometry")
    return Scenario(
        area_side=float(doc["area_side"]),
        ap_positions=positions,
        carrier_frequency=float(doc["carrier_frequency"]),
        wavelength=wavelength,
        q=q,
        label_count=label_count,
        seed=int(doc["seed"]),
        reference_ap_index=int(doc.get("reference_ap_index", 0)),
    )
