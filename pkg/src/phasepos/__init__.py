"""Uplink carrier-phase positioning testbed.

Simulates wrapped-phase measurements across a distributed antenna
deployment, resolves the integer wavelength ambiguities with a multi-head
classifier, positions with either a dense network or an ambiguity-aided
convolutional network, and benchmarks everything against grid-search
maximum-likelihood estimation under matched FLOP budgets.
"""

from .common import ConfigError, DataError, NumericError, derive_rng
from .scenario import (Scenario, ScenarioConfig, ambiguity_bounds,
                       generate_scenario, sample_ue, sample_ue_batch,
                       scenario_from_json, scenario_hash, scenario_to_json)
from .channel import (LinkBudget, PhaseBatch, PhaseSample, covariance,
                      differential, path_loss, phase_noise_sigma,
                      simulate_batch, simulate_sample, wrap_phase)
from .datasets import (SampleSet, export_csv, generate_samples, load_samples,
                       save_samples)
from .mle import (GridSpec, MleEstimate, estimate_position,
                  estimate_position_batch, grid_for_budget, grid_search,
                  h_model, mle_flops, nll, refine)
from .models import (AmbiguityDecision, ModelHyperparams, aided_flops,
                     build_ambiguity_estimator, build_cnn_positioner,
                     build_mlp_positioner, cnn_flops, decide_ambiguities,
                     decode_ambiguity_labels, encode_ambiguity_labels,
                     estimate_ambiguity_probs, estimator_flops,
                     load_aided_bundle, mlp_flops, predict_position_aided,
                     predict_position_direct, save_aided_bundle,
                     stack_aided_input)
from .evaluation import (Ecdf, EvalReport, acc_element, acc_overall, compare,
                         position_errors, reduction_factor, rmse)

__version__ = "1.0.0"
