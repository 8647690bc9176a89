import numpy as np
import pytest

from phasepos.common import DataError, derive_rng
from phasepos.channel import LinkBudget
from phasepos.datasets import generate_samples
from phasepos.evaluation import (Ecdf, acc_element, acc_overall, compare,
                                 ecdf_rows, position_errors, rmse,
                                 reduction_factor, rmse_vs_power_rows,
                                 write_csv)
from phasepos.models import (build_ambiguity_estimator, build_cnn_positioner,
                             build_mlp_positioner, cnn_flops, estimator_flops,
                             mlp_flops)
from phasepos.nn import init_state
from phasepos.pipeline import config_sigma_inv
from phasepos.scenario import scenario_hash


# --------------------------------------------------------------- metrics

def test_rmse_hand_value():
    est = np.array([[3.0, 4.0], [1.0, 1.0]])
    tru = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert np.allclose(position_errors(est, tru), [5.0, 0.0])
    assert rmse(est, tru) == pytest.approx(np.sqrt(12.5))
    with pytest.raises(ValueError):
        rmse(est, tru[:1])
    with pytest.raises(ValueError):
        rmse(est[:0], tru[:0])


def test_accuracy_hand_values():
    k_true = np.array([[1, 2, 3], [0, 0, 0]])
    k_hat = np.array([[1, 2, 0], [0, 0, 0]])
    assert acc_element(k_hat, k_true) == pytest.approx(100 * 5 / 6)
    assert acc_overall(k_hat, k_true) == pytest.approx(50.0)


def test_overall_never_exceeds_element(rng):
    for _ in range(25):
        shape = (rng.integers(1, 40), rng.integers(1, 8))
        k_true = rng.integers(-2, 3, size=shape)
        k_hat = k_true + (rng.random(shape) < 0.3) * rng.integers(-1, 2, size=shape)
        assert acc_overall(k_hat, k_true) <= acc_element(k_hat, k_true) + 1e-12


def test_ecdf_levels_and_percentiles(rng):
    errs = rng.exponential(size=20)
    e = Ecdf.from_errors(errs)
    assert np.allclose(e.probs, np.arange(1, 21) / 20)
    assert np.all(np.diff(e.values) >= 0)
    assert e.percentile(95.0) == e.values[18]
    assert e.percentile(100.0) == e.values[-1]
    assert e.percentile(0.5) == e.values[0]
    rows = e.to_rows()
    assert rows.shape == (20, 2)
    with pytest.raises(ValueError):
        e.percentile(0.0)
    with pytest.raises(ValueError):
        Ecdf.from_errors(np.array([]))


def test_reduction_factor():
    assert reduction_factor(759_000, 759) == pytest.approx(1000.0)
    assert reduction_factor(3.0, 2.0) == pytest.approx(
        reduction_factor(300.0, 200.0))
    with pytest.raises(ValueError):
        reduction_factor(0, 5)


# --------------------------------------------------------------- harness

@pytest.fixture(scope="module")
def bench_parts(small_scenario):
    sc = small_scenario
    budget = LinkBudget.from_dbm(0.0)
    test = generate_samples(sc, budget, 24, derive_rng(11, "eval-test"))
    sigma_inv = config_sigma_inv(sc, budget)
    mlp = build_mlp_positioner(4, sc.ap_count)
    est = build_ambiguity_estimator(4, sc.ap_count, sc.q)
    cnn = build_cnn_positioner(4, 4, sc.ap_count)
    states = {
        "mlp": init_state(mlp, derive_rng(11, "m")),
        "est": init_state(est, derive_rng(11, "e")),
        "cnn": init_state(cnn, derive_rng(11, "c")),
    }
    label_count = int(np.sum(2 * sc.q + 1))
    flops = {
        "mlp": mlp_flops(4),
        "est": estimator_flops(4, sc.ap_count, label_count),
        "cnn": cnn_flops(4, 4, sc.ap_count),
    }
    return sc, budget, test, sigma_inv, mlp, est, cnn, states, flops


def test_compare_methods_and_reductions(bench_parts):
    sc, budget, test, sigma_inv, mlp, est, cnn, states, flops = bench_parts
    aided_flops_total = flops["cnn"] + flops["est"]
    reports = compare(
        sc, test, sigma_inv, sc.carrier_frequency, 0.0,
        mlp=(mlp, states["mlp"], flops["mlp"]),
        aided=(est, states["est"], cnn, states["cnn"],
               aided_flops_total, flops["est"]),
        model_hashes={"mlp": scenario_hash(sc)},
        nn_budgets={"mlp": flops["mlp"]},
        performance_grid=25, mle_steps=8, max_mle_samples=10)
    by_method = {r.method: r for r in reports}
    assert set(by_method) == {"mlp", "cnn_estimated", "cnn_oracle",
                              "mle_matched_mlp", "mle_full"}
    for r in reports:
        assert r.rmse >= 0 and r.scenario_hash == scenario_hash(sc)
    # untrained nets are bad; the full search at least beats random output
    assert by_method["mle_full"].rmse < by_method["mlp"].rmse
    cnn_r = by_method["cnn_estimated"]
    assert cnn_r.acc_overall <= cnn_r.acc_element
    assert by_method["cnn_oracle"].acc_element == 100.0
    # reduction factor consistent with the declared performance grid
    perf = by_method["mle_full"].flops
    assert by_method["mlp"].reduction_factor == pytest.approx(perf / flops["mlp"])
    assert cnn_r.reduction_factor == pytest.approx(perf / aided_flops_total)
    # matched search: smallest square lattice whose cost covers the budget
    matched = by_method["mle_matched_mlp"]
    assert matched.flops >= flops["mlp"]
    side = int(round(np.sqrt(matched.extras["n_grid"])))
    assert side * side == matched.extras["n_grid"]
    assert (side - 1) ** 2 * matched.flops // matched.extras["n_grid"] < flops["mlp"]
    assert matched.sample_count == 10
    d = cnn_r.to_dict()
    assert d["p95_m"] == cnn_r.ecdf.percentile(95.0)
    assert d["rmse_m"] == cnn_r.rmse


def test_compare_rejects_foreign_artifacts(bench_parts, tiny_scenario):
    sc, budget, test, sigma_inv, mlp, est, cnn, states, flops = bench_parts
    with pytest.raises(DataError, match="different scenario"):
        compare(tiny_scenario, test, sigma_inv, sc.carrier_frequency, 0.0)
    with pytest.raises(DataError, match="mlp"):
        compare(sc, test, sigma_inv, sc.carrier_frequency, 0.0,
                mlp=(mlp, states["mlp"], flops["mlp"]),
                model_hashes={"mlp": "f" * 64})


def test_csv_rows_and_writer(bench_parts, tmp_path):
    sc, budget, test, sigma_inv, mlp, _e, _c, states, flops = bench_parts
    reports = compare(sc, test, sigma_inv, sc.carrier_frequency, -10.0,
                      mlp=(mlp, states["mlp"], flops["mlp"]))
    rows = rmse_vs_power_rows(reports)
    assert rows == [(-10.0, reports[0].rmse, "mlp", sc.carrier_frequency, -10.0)]
    erows = ecdf_rows(reports)
    assert len(erows) == test.count
    assert erows[0][2] == "mlp"
    assert [r[1] for r in erows] == pytest.approx(
        (np.arange(1, test.count + 1) / test.count).tolist())
    out = tmp_path / "rows.csv"
    write_csv(out, rows)
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "x,y,method,frequency,power"
    assert len(lines) == 2
    assert float(lines[1].split(",")[1]) == pytest.approx(reports[0].rmse)
