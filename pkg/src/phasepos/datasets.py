"""Binary sample-set I/O.

File layout: one UTF-8 JSON header line terminated by ``\n``, then ``count``
fixed-width little-endian records:

    ue_x f64 | ue_y f64 | delta (I-1) x f64 | k (I-1) x i32

The header carries the scenario hash, the link budget, and the record count,
so a file can be validated against the scenario it claims to describe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .channel import LinkBudget, simulate_batch
from .common import DataError, canonical_json
from .scenario import Scenario, sample_ue_batch, scenario_hash

_MAGIC = "phasepos-dataset-v1"


def _record_dtype(ap_count: int) -> np.dtype:
    m = ap_count - 1
    return np.dtype([
        ("ue", "<f8", (2,)),
        ("delta", "<f8", (m,)),
        ("k", "<i4", (m,)),
    ])


@dataclass(frozen=True, eq=False)
class SampleSet:
    ue_positions: np.ndarray   # (n, 2) f64
    differentials: np.ndarray  # (n, I-1) f64
    true_k: np.ndarray         # (n, I-1) i32
    scenario_hash: str
    budget: LinkBudget

    @property
    def count(self) -> int:
        return self.ue_positions.shape[0]


def generate_samples(scenario: Scenario, budget: LinkBudget, count: int,
                     rng: np.random.Generator, chunk: int = 100_000,
                     min_ue_ap_distance: float = 0.1) -> SampleSet:
    """Draw ``count`` independent UE positions and their phase observations."""
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    m = scenario.ap_count - 1
    ue = np.empty((count, 2), dtype=np.float64)
    delta = np.empty((count, m), dtype=np.float64)
    k = np.empty((count, m), dtype=np.int32)
    done = 0
    while done < count:
        n = min(chunk, count - done)
        pos = sample_ue_batch(scenario, n, rng, min_ue_ap_distance)
        batch = simulate_batch(scenario, budget, pos, rng)
        ue[done:done + n] = batch.ue_positions
        delta[done:done + n] = batch.differentials
        k[done:done + n] = batch.true_k
        done += n
    return SampleSet(ue, delta, k, scenario_hash(scenario), budget)


def save_samples(path, samples: SampleSet, scenario: Scenario) -> None:
    if samples.scenario_hash != scenario_hash(scenario):
        raise DataError("sample set does not belong to this scenario")
    header = {
        "magic": _MAGIC,
        "scenario_hash": samples.scenario_hash,
        "ap_count": scenario.ap_count,
        "count": samples.count,
        "budget": samples.budget.to_dict(),
    }
    rec = np.zeros(samples.count, dtype=_record_dtype(scenario.ap_count))
    rec["ue"] = samples.ue_positions
    rec["delta"] = samples.differentials
    rec["k"] = samples.true_k
    with open(path, "wb") as f:
        f.write(canonical_json(header).encode("utf-8") + b"\n")
        f.write(rec.tobytes())


def load_samples(path, scenario: Scenario | None = None) -> SampleSet:
    with open(path, "rb") as f:
        line = f.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"bad dataset header in {path}: {e}") from e
        if header.get("magic") != _MAGIC:
            raise DataError(f"{path} is not a dataset file")
        ap_count = int(header["ap_count"])
        count = int(header["count"])
        dtype = _record_dtype(ap_count)
        buf = f.read()
    if len(buf) != count * dtype.itemsize:
        raise DataError(f"{path}: expected {count} records "
                        f"({count * dtype.itemsize} bytes), found {len(buf)} bytes")
    if scenario is not None:
        if ap_count != scenario.ap_count:
            raise DataError(f"{path}: dataset has {ap_count} APs, scenario has {scenario.ap_count}")
        if header["scenario_hash"] != scenario_hash(scenario):
            raise DataError(f"{path}: scenario hash mismatch")
    rec = np.frombuffer(buf, dtype=dtype)
    return SampleSet(
        ue_positions=rec["ue"].astype(np.float64),
        differentials=rec["delta"].astype(np.float64),
        true_k=rec["k"].astype(np.int32),
        scenario_hash=header["scenario_hash"],
        budget=LinkBudget.from_dict(header["budget"]),
    )


def export_csv(path, samples: SampleSet) -> None:
    """Human-readable dump: ue_x, ue_y, delta_1..delta_M, k_1..k_M."""
    m = samples.differentials.shape[1]
    cols = ["ue_x", "ue_y"]
    cols += [f"delta_{i}" for i in range(1, m + 1)]
    cols += [f"k_{i}" for i in range(1, m + 1)]
    data = np.hstack([samples.ue_positions, samples.differentials,
                      samples.true_k.astype(np.float64)])
    fmt = ["%.17g"] * (2 + m) + ["%d"] * m
    np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt=fmt)
