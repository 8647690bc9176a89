"""End-to-end run orchestration: scenario -> datasets -> training -> benchmark.

A run is described by one JSON config (seed, output dir, experiment grid,
training settings). Every stage derives its RNG streams from the run seed
and stage-specific labels, so each stage is independently reproducible and
a re-run with the same seed writes byte-identical artifacts. Stages skip
work whose outputs already exist; training resumes from epoch checkpoints.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .channel import LinkBudget, covariance, path_loss
from .common import ConfigError, DataError, derive_rng
from .datasets import SampleSet, export_csv, generate_samples, load_samples, save_samples
from .evaluation import compare, ecdf_rows, rmse_vs_power_rows, write_csv
from .models import (ModelHyperparams, aided_flops, aided_input,
                     build_ambiguity_estimator, build_cnn_positioner,
                     build_mlp_positioner, encode_ambiguity_labels,
                     estimator_flops, load_aided_bundle, mlp_flops,
                     normalize_features, normalize_positions, save_aided_bundle)
from .nn.serialize import (history_from_header, load_weights, save_history_csv,
                           save_weights)
from .nn.spec import init_state
from .nn.training import TrainConfig, train
from .scenario import (Scenario, ScenarioConfig, generate_scenario,
                       scenario_from_json, scenario_hash, scenario_to_json)

MODELS = ("mlp", "ae", "cnn")
SPLITS = ("train", "val", "test")

# Table-default target sparsities per (model, frequency band)
DEFAULT_SPARSITY = {
    "mlp": {800_000_000: 0.5, 1_800_000_000: 0.5},
    "ae": {800_000_000: 0.5, 1_800_000_000: 0.0},
    "cnn": {800_000_000: 0.75, 1_800_000_000: 0.75},
}
# Published full-accuracy lattice sizes per frequency
DEFAULT_PERFORMANCE_GRID = {800_000_000: 750**2, 1_800_000_000: 1800**2}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    desk_scale: bool = False
    frequencies: tuple = (800e6, 1.8e9)
    powers_dbm: tuple = (-30.0, -20.0, -10.0, 0.0)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    hyper: ModelHyperparams = field(default_factory=ModelHyperparams)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_size: int = 700_000
    val_size: int = 150_000
    test_size: int = 150_000
    sparsities: dict = field(default_factory=lambda: DEFAULT_SPARSITY)
    performance_grids: dict = field(default_factory=lambda: DEFAULT_PERFORMANCE_GRID)
    max_mle_samples: int | None = 2000
    checkpoint_every: int = 25

    def __post_init__(self):
        if not self.powers_dbm:
            raise ConfigError("powers_dbm must not be empty")
        if not self.frequencies:
            raise ConfigError("frequencies must not be empty")
        for name in ("train_size", "val_size", "test_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def sparsity_for(self, model: str, frequency: float) -> float:
        table = self.sparsities.get(model, {})
        key = int(round(frequency))
        if key in table:
            return float(table[key])
        if str(key) in table:
            return float(table[str(key)])
        raise ConfigError(f"no target sparsity for model {model!r} at {frequency} Hz")

    def performance_grid_for(self, frequency: float) -> int:
        key = int(round(frequency))
        table = self.performance_grids
        if key in table:
            return int(table[key])
        if str(key) in table:
            return int(table[str(key)])
        raise ConfigError(f"no full-accuracy lattice size for {frequency} Hz")


# Reduced preset: small widths and a short schedule with the pruning window
# rescaled onto it (same 10%..40% phase as the full run). The short schedule
# needs a hotter optimizer than the full one: peak rate 3e-3 annealed, and a
# weight penalty an order below the target validation loss so it does not
# become the accuracy floor. Sparsity targets stay at the full-scale
# defaults.
DESK_PRESET = {
    "frequencies": (800e6,),
    "train_size": 50_000,
    "val_size": 10_000,
    "test_size": 10_000,
    "hyper": {"A": 64, "B": 64, "C": 16, "D": 64},
    "train": {"epochs": 150, "learning_rate": 3e-3, "batch_size": 250,
              "l2_coeff": 1e-5, "prune_start_epoch": 15, "prune_end_epoch": 60},
}


def _apply_preset(doc: dict) -> dict:
    merged = dict(doc)
    for key, value in DESK_PRESET.items():
        if isinstance(value, dict):
            merged[key] = {**value, **doc.get(key, {})}
        elif key not in doc:
            merged[key] = value
    return merged


def load_run_config(path: str | None = None, *, desk_scale: bool | None = None,
                    seed: int | None = None, output_dir: str | None = None,
                    env: dict | None = None) -> RunConfig:
    """Build a RunConfig from (file <- preset <- explicit args <- environment)."""
    env = os.environ if env is None else env
    doc = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                doc = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if desk_scale is not None:
        doc["desk_scale"] = desk_scale
    if doc.get("desk_scale"):
        doc = _apply_preset(doc)
    if seed is not None:
        doc["seed"] = seed
    if output_dir is not None:
        doc["output_dir"] = output_dir
    if env.get("PHASEPOS_SEED"):
        doc["seed"] = int(env["PHASEPOS_SEED"])
    if env.get("PHASEPOS_OUTPUT_DIR"):
        doc["output_dir"] = env["PHASEPOS_OUTPUT_DIR"]

    kwargs = {}
    simple = ("seed", "output_dir", "desk_scale", "train_size", "val_size",
              "test_size", "max_mle_samples", "checkpoint_every")
    for key in simple:
        if key in doc:
            kwargs[key] = doc[key]
    if "frequencies" in doc:
        kwargs["frequencies"] = tuple(float(f) for f in doc["frequencies"])
    if "powers_dbm" in doc:
        kwargs["powers_dbm"] = tuple(float(p) for p in doc["powers_dbm"])
    if "scenario" in doc:
        kwargs["scenario"] = ScenarioConfig(**{**doc["scenario"], "rng_seed": doc.get("seed", 0)})
    else:
        kwargs["scenario"] = ScenarioConfig(rng_seed=doc.get("seed", 0))
    if "hyper" in doc:
        kwargs["hyper"] = ModelHyperparams.from_dict(doc["hyper"])
    if "train" in doc:
        base = TrainConfig(seed=doc.get("seed", 0)).to_dict()
        base.update(doc["train"])
        base["seed"] = doc.get("seed", 0)
        kwargs["train"] = TrainConfig.from_dict(base)
    else:
        kwargs["train"] = TrainConfig(seed=doc.get("seed", 0))
    if "sparsities" in doc:
        kwargs["sparsities"] = doc["sparsities"]
    if "performance_grids" in doc:
        kwargs["performance_grids"] = doc["performance_grids"]
    unknown = set(doc) - set(simple) - {"frequencies", "powers_dbm", "scenario",
                                        "hyper", "train", "sparsities",
                                        "performance_grids"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**kwargs)


# --- paths -------------------------------------------------------------------

def _freq_tag(frequency: float) -> str:
    return f"f{int(round(frequency / 1e6))}mhz"

def _power_tag(power: float) -> str:
    return f"p{power:+g}dbm".replace("+", "")

def scenario_path(cfg: RunConfig, frequency: float) -> str:
    return os.path.join(cfg.output_dir, "scenarios", f"{_freq_tag(frequency)}.json")

def dataset_path(cfg: RunConfig, frequency: float, power: float, split: str) -> str:
    return os.path.join(cfg.output_dir, "datasets",
                        f"{_freq_tag(frequency)}_{_power_tag(power)}_{split}.bin")

def model_path(cfg: RunConfig, model: str, frequency: float, power: float) -> str:
    name = f"{model}_{_freq_tag(frequency)}_{_power_tag(power)}"
    if model == "cnn":
        return os.path.join(cfg.output_dir, "models", name)  # bundle directory
    return os.path.join(cfg.output_dir, "models", name + ".weights")

def checkpoint_path(cfg: RunConfig, model: str, frequency: float, power: float) -> str:
    return os.path.join(cfg.output_dir, "checkpoints",
                        f"{model}_{_freq_tag(frequency)}_{_power_tag(power)}.ckpt")


# --- stages ------------------------------------------------------------------

def build_scenario(cfg: RunConfig, frequency: float) -> Scenario:
    sc_cfg = dataclasses.replace(cfg.scenario, carrier_frequency=frequency,
                                 rng_seed=cfg.seed)
    return generate_scenario(sc_cfg, derive_rng(cfg.seed, "scenario"))


def cmd_scenario(cfg: RunConfig, progress=print) -> list:
    """Write one scenario JSON per frequency; same seed -> same AP layout."""
    paths = []
    for frequency in cfg.frequencies:
        scenario = build_scenario(cfg, frequency)
        path = scenario_path(cfg, frequency)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(scenario_to_json(scenario) + "\n")
        progress(f"scenario {_freq_tag(frequency)}: {scenario.ap_count} APs, "
                 f"{scenario.label_count} ambiguity classes -> {path}")
        paths.append(path)
    return paths


def load_scenario_file(cfg: RunConfig, frequency: float) -> Scenario:
    path = scenario_path(cfg, frequency)
    if not os.path.exists(path):
        raise DataError(f"missing scenario file {path}; run the scenario stage first")
    with open(path, encoding="utf-8") as f:
        return scenario_from_json(f.read())


def cmd_simulate(cfg: RunConfig, progress=print) -> list:
    """Generate train/val/test sample files for every (frequency, power)."""
    written = []
    sizes = {"train": cfg.train_size, "val": cfg.val_size, "test": cfg.test_size}
    for frequency in cfg.frequencies:
        scenario = build_scenario(cfg, frequency)
        for power in cfg.powers_dbm:
            budget = LinkBudget.from_dbm(power)
            for split in SPLITS:
                path = dataset_path(cfg, frequency, power, split)
                if os.path.exists(path):
                    progress(f"simulate: {path} exists, skipping")
                    continue
                os.makedirs(os.path.dirname(path), exist_ok=True)
                rng = derive_rng(cfg.seed, "data", _freq_tag(frequency),
                                 _power_tag(power), split)
                samples = generate_samples(scenario, budget, sizes[split], rng,
                                           min_ue_ap_distance=cfg.scenario.min_ue_ap_distance)
                save_samples(path, samples, scenario)
                progress(f"simulate: wrote {sizes[split]} samples -> {path}")
                written.append(path)
    return written


def _load_split(cfg: RunConfig, scenario: Scenario, frequency, power, split) -> SampleSet:
    path = dataset_path(cfg, frequency, power, split)
    if not os.path.exists(path):
        raise DataError(f"missing dataset {path}; run the simulate stage first")
    return load_samples(path, scenario)


def _training_arrays(model: str, scenario: Scenario, samples: SampleSet, progress):
    """Network-facing arrays; features/targets use the models normalization."""
    if model == "mlp":
        return (normalize_features(samples.differentials, scenario),
                normalize_positions(samples.ue_positions, scenario))
    if model == "ae":
        labels, clamped = encode_ambiguity_labels(samples.true_k, scenario.q)
        if clamped and progress is not None:
            progress(f"  {clamped} of {labels.size} labels sat one past the "
                     f"geometric bound and were clamped ({100 * clamped / labels.size:.4f}%)")
        return normalize_features(samples.differentials, scenario), labels
    if model == "cnn":
        x = aided_input(samples.differentials, samples.true_k, scenario)
        return x, normalize_positions(samples.ue_positions, scenario)
    raise ConfigError(f"unknown model {model!r}")


def _build_model_spec(model: str, cfg: RunConfig, scenario: Scenario):
    if model == "mlp":
        return build_mlp_positioner(cfg.hyper.A, scenario.ap_count)
    if model == "ae":
        return build_ambiguity_estimator(cfg.hyper.B, scenario.ap_count, scenario.q)
    if model == "cnn":
        return build_cnn_positioner(cfg.hyper.C, cfg.hyper.D, scenario.ap_count)
    raise ConfigError(f"unknown model {model!r}")


def train_one(cfg: RunConfig, model: str, frequency: float, power: float,
              progress=print) -> str:
    """Train a single (model, frequency, power) cell, resuming if possible."""
    out = model_path(cfg, model, frequency, power)
    if os.path.exists(out):
        progress(f"train: {out} exists, skipping")
        return out
    scenario = build_scenario(cfg, frequency)
    train_set = _load_split(cfg, scenario, frequency, power, "train")
    val_set = _load_split(cfg, scenario, frequency, power, "val")
    x, y = _training_arrays(model, scenario, train_set, progress)
    xv, yv = _training_arrays(model, scenario, val_set, None)

    tag = f"{model}_{_freq_tag(frequency)}_{_power_tag(power)}"
    train_cfg = dataclasses.replace(
        cfg.train, target_sparsity=cfg.sparsity_for(model, frequency), seed=cfg.seed)
    spec = _build_model_spec(model, cfg, scenario)

    ckpt = checkpoint_path(cfg, model, frequency, power)
    start_epoch = 0
    history = None
    if os.path.exists(ckpt):
        ck_spec, state, header = load_weights(ckpt)
        if ck_spec != spec or header["train_config"] != train_cfg.to_dict():
            raise DataError(f"checkpoint {ckpt} does not match the requested training run")
        start_epoch = int(header["epoch"])
        history = history_from_header(header)
        progress(f"train {tag}: resuming at epoch {start_epoch}")
    else:
        state = init_state(spec, derive_rng(cfg.seed, "init", tag))

    os.makedirs(os.path.dirname(ckpt), exist_ok=True)

    def save_ckpt(done_epoch, st, hist):
        tmp = ckpt + ".tmp"
        save_weights(tmp, spec, st, seed=cfg.seed, train_config=train_cfg,
                     epoch=done_epoch, history=hist, include_adam=True,
                     extra={"scenario_hash": scenario_hash(scenario), "model": model})
        os.replace(tmp, ckpt)

    history = train(spec, state, x, y, train_cfg, xv, yv, start_epoch=start_epoch,
                    history=history, progress=None, checkpoint_cb=save_ckpt,
                    checkpoint_every=cfg.checkpoint_every)

    os.makedirs(os.path.dirname(out), exist_ok=True)
    extra = {"scenario_hash": scenario_hash(scenario), "model": model}
    if model == "cnn":
        # the aided positioner ships as a bundle with its ambiguity estimator
        est_path = model_path(cfg, "ae", frequency, power)
        if not os.path.exists(est_path):
            raise DataError(f"missing estimator weights {est_path}; train 'ae' before 'cnn'")
        est_spec, est_state, _ = load_weights(est_path)
        save_aided_bundle(out, scenario, cfg.hyper, est_spec, est_state, spec, state,
                          meta={"frequency": frequency, "power_dbm": power})
        save_history_csv(os.path.join(out, "history.csv"), history)
    else:
        save_weights(out, spec, state, seed=cfg.seed, train_config=train_cfg,
                     epoch=train_cfg.epochs, extra=extra)
        save_history_csv(out + ".history.csv", history)
    progress(f"train {tag}: final train loss {history.train_losses[-1]:.6g} -> {out}")
    return out


def cmd_train(cfg: RunConfig, models=("all",), frequency=None, power=None,
              progress=print) -> list:
    wanted = list(MODELS) if "all" in models else [m for m in MODELS if m in models]
    bad = set(models) - set(MODELS) - {"all"}
    if bad:
        raise ConfigError(f"unknown model(s) {sorted(bad)}; choose from {MODELS} or 'all'")
    outputs = []
    for freq in cfg.frequencies:
        if frequency is not None and not np.isclose(freq, frequency):
            continue
        for pw in cfg.powers_dbm:
            if power is not None and not np.isclose(pw, power):
                continue
            for model in wanted:  # MODELS order trains 'ae' before 'cnn'
                outputs.append(train_one(cfg, model, freq, pw, progress))
    if not outputs:
        raise ConfigError("nothing to train for the requested model/frequency/power filter")
    return outputs


def config_sigma_inv(scenario: Scenario, budget: LinkBudget) -> np.ndarray:
    """Shared (I-1)x(I-1) whitening matrix, anchored at the area center."""
    center = np.array([scenario.area_side / 2.0, scenario.area_side / 2.0])
    d = np.linalg.norm(scenario.ap_positions - center[None, :], axis=1)
    gains = path_loss(d, scenario.wavelength)
    sigma = covariance(scenario, budget, gains)
    inv = np.linalg.inv(sigma)
    return (inv + inv.T) / 2.0


def cmd_bench(cfg: RunConfig, frequency=None, power=None, progress=print,
              performance_match: bool = True) -> list:
    """Evaluate every trained method against the matched grid searches."""
    all_reports = []
    for freq in cfg.frequencies:
        if frequency is not None and not np.isclose(freq, frequency):
            continue
        scenario = build_scenario(cfg, freq)
        freq_reports = []
        for pw in cfg.powers_dbm:
            if power is not None and not np.isclose(pw, power):
                continue
            test = _load_split(cfg, scenario, freq, pw, "test")
            budget = LinkBudget.from_dbm(pw)
            sigma_inv = config_sigma_inv(scenario, budget)

            mlp_file = model_path(cfg, "mlp", freq, pw)
            if not os.path.exists(mlp_file):
                raise DataError(f"missing trained model (mlp, {_freq_tag(freq)}, "
                                f"{_power_tag(pw)}): {mlp_file}")
            mlp_spec, mlp_state, mlp_header = load_weights(mlp_file)
            keep_mlp = 1.0 - cfg.sparsity_for("mlp", freq)
            mlp_cost = mlp_flops(cfg.hyper.A, keep_mlp)

            bundle_dir = model_path(cfg, "cnn", freq, pw)
            if not os.path.exists(bundle_dir):
                raise DataError(f"missing trained model (cnn, {_freq_tag(freq)}, "
                                f"{_power_tag(pw)}): {bundle_dir}")
            est_spec, est_state, cnn_spec, cnn_state, bundle = load_aided_bundle(bundle_dir)
            keep_cnn = 1.0 - cfg.sparsity_for("cnn", freq)
            keep_ae = 1.0 - cfg.sparsity_for("ae", freq)
            aided_cost = aided_flops(cfg.hyper.C, cfg.hyper.D, cfg.hyper.B,
                                     scenario.ap_count, scenario.label_count,
                                     keep_cnn, keep_ae)

            reports = compare(
                scenario, test, sigma_inv, freq, pw,
                mlp=(mlp_spec, mlp_state, mlp_cost),
                aided=(est_spec, est_state, cnn_spec, cnn_state, aided_cost,
                       estimator_flops(cfg.hyper.B, scenario.ap_count,
                                       scenario.label_count, keep_ae)),
                model_hashes={"mlp": mlp_header["extra"].get("scenario_hash"),
                              "cnn": bundle["scenario_hash"]},
                nn_budgets={"mlp": mlp_cost, "cnn": aided_cost},
                performance_grid=(cfg.performance_grid_for(freq)
                                  if performance_match else None),
                max_mle_samples=cfg.max_mle_samples,
            )
            freq_reports.extend(reports)
            for r in reports:
                progress(f"bench {_freq_tag(freq)} {_power_tag(pw)} {r.method}: "
                         f"rmse {100 * r.rmse:.2f} cm, flops {r.flops}")

        out_dir = os.path.join(cfg.output_dir, "reports")
        os.makedirs(out_dir, exist_ok=True)
        tag = _freq_tag(freq)
        with open(os.path.join(out_dir, f"bench_{tag}.json"), "w", encoding="utf-8") as f:
            json.dump([r.to_dict() for r in freq_reports], f, indent=2, sort_keys=True)
        write_csv(os.path.join(out_dir, f"rmse_vs_power_{tag}.csv"),
                  rmse_vs_power_rows(freq_reports))
        zero_dbm = [r for r in freq_reports if r.power_dbm == 0.0]
        if zero_dbm:
            write_csv(os.path.join(out_dir, f"ecdf_0dbm_{tag}.csv"), ecdf_rows(zero_dbm))
        all_reports.extend(freq_reports)
    if not all_reports:
        raise ConfigError("nothing to benchmark for the requested filter")
    return all_reports


def cmd_export(cfg: RunConfig, dataset: str, out: str | None = None,
               progress=print) -> str:
    """Convert a binary sample file to CSV for inspection."""
    if not os.path.exists(dataset):
        raise DataError(f"no such dataset: {dataset}")
    samples = load_samples(dataset)
    out = out or (os.path.splitext(dataset)[0] + ".csv")
    export_csv(out, samples)
    progress(f"export: {samples.count} samples -> {out}")
    return out
