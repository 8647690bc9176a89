import math

import numpy as np
import pytest

from phasepos.channel import LinkBudget, path_loss, simulate_batch, covariance
from phasepos.common import ConfigError, derive_rng
from phasepos.mle import (GridSpec, estimate_position, estimate_position_batch,
                          grid_for_budget, grid_search, h_model, mle_flops,
                          nll, precompute_h_table, refine, _gradient)
from phasepos.scenario import sample_ue_batch


@pytest.fixture(scope="module")
def whitening(small_scenario):
    sc = small_scenario
    b = LinkBudget.from_dbm(0.0)
    center = np.array([sc.area_side / 2, sc.area_side / 2])
    rho = path_loss(np.linalg.norm(sc.ap_positions - center, axis=1), sc.wavelength)
    inv = np.linalg.inv(covariance(sc, b, rho))
    return (inv + inv.T) / 2


def test_grid_spec_validation():
    with pytest.raises(ConfigError):
        GridSpec(12)  # not a perfect square
    with pytest.raises(ConfigError):
        GridSpec(0)
    with pytest.raises(ConfigError):
        GridSpec(4, area_side=-1.0)


def test_grid_points_are_cell_centers():
    g = GridSpec(4, area_side=10.0)
    assert g.side == 2
    # x varies fastest; centers at h/2 offsets
    expect = np.array([[2.5, 2.5], [7.5, 2.5], [2.5, 7.5], [7.5, 7.5]])
    assert np.allclose(g.points(), expect)
    g = GridSpec(10201, area_side=10.0)
    pts = g.points()
    assert pts.shape == (10201, 2)
    assert pts[0] == pytest.approx([10.0 / 101 / 2] * 2)
    assert pts[1][0] - pts[0][0] == pytest.approx(10.0 / 101)


def test_h_model_components_bounded(small_scenario, rng):
    pts = rng.uniform(0, 10, size=(200, 2))
    h = h_model(pts, small_scenario)
    lam = small_scenario.wavelength
    assert h.shape == (200, 19)
    assert np.all(h > -lam) and np.all(h < lam)
    # single-point call agrees with the batch row
    assert np.allclose(h_model(pts[0], small_scenario), h[0])


def test_h_model_matches_channel_up_to_integer_cycles(small_scenario, rng):
    """The noiseless channel differentials and the measurement model differ
    by an exact integer number of wavelengths component-wise."""
    sc = small_scenario
    b = LinkBudget.from_dbm(0.0)
    ue = sample_ue_batch(sc, 100, rng)
    batch = simulate_batch(sc, b, ue, rng, with_noise=False)
    cycles = (batch.differentials - h_model(ue, sc)) / sc.wavelength
    assert np.max(np.abs(cycles - np.rint(cycles))) < 1e-7


def test_nll_zero_at_truth_with_wrapped_residual(small_scenario, whitening, rng):
    sc = small_scenario
    b = LinkBudget.from_dbm(0.0)
    ue = sample_ue_batch(sc, 50, rng)
    batch = simulate_batch(sc, b, ue, rng, with_noise=False)
    for i in range(50):
        v = nll(batch.differentials[i], ue[i], sc, whitening, wrap_residual=True)
        assert v < 1e-10


def test_gradient_matches_finite_differences(small_scenario, whitening, rng):
    sc = small_scenario
    eps = 1e-7
    worst = 0.0
    for _ in range(20):
        x = rng.uniform(1, 9, size=2)
        delta = h_model(x + rng.normal(0, 0.02, size=2), sc)
        g, f = _gradient(x, delta, sc, whitening, wrap_residual=False)
        assert f == pytest.approx(nll(delta, x, sc, whitening), rel=1e-12)
        fd = np.empty(2)
        for j in range(2):
            e = np.zeros(2)
            e[j] = eps
            fd[j] = (nll(delta, x + e, sc, whitening) -
                     nll(delta, x - e, sc, whitening)) / (2 * eps)
        worst = max(worst, np.max(np.abs(fd - g) / np.maximum(np.abs(fd), 1.0)))
    assert worst < 1e-4


def test_grid_search_matches_bruteforce(small_scenario, whitening, rng):
    sc = small_scenario
    grid = GridSpec(625)
    table = precompute_h_table(sc, grid)
    for _ in range(5):
        delta = h_model(rng.uniform(0, 10, size=2), sc) + rng.normal(0, 1e-3, 19)
        # independent oracle: full-table objective, first argmin
        r = delta[None, :] - table
        vals = np.einsum("ij,ij->i", r @ whitening, r)
        oracle_idx = int(np.argmin(vals))
        pt, val, idx, flops = grid_search(delta, sc, whitening, grid, h_table=table,
                                          chunk=97)
        assert idx == oracle_idx
        assert val == pytest.approx(vals[oracle_idx])
        assert np.allclose(pt, grid.points()[oracle_idx])
        assert flops == mle_flops(625, sc.ap_count)


def test_grid_search_tie_breaks_to_lowest_index(small_scenario):
    # a zero whitening matrix makes every lattice point tie at objective 0
    grid = GridSpec(81)
    delta = np.zeros(19)
    _, val, idx, _ = grid_search(delta, small_scenario, np.zeros((19, 19)), grid)
    assert val == 0.0
    assert idx == 0


def test_refine_contract(small_scenario, whitening, rng):
    sc = small_scenario
    x_true = rng.uniform(2, 8, size=2)
    delta = h_model(x_true, sc)
    x0 = x_true + np.array([0.03, -0.02])
    est = refine(x0, delta, sc, whitening, steps=40)
    assert est.refinement_steps_used == 40
    assert est.objective_history.shape == (41,)
    assert np.all(np.diff(est.objective_history) <= 0)
    assert est.objective_value <= nll(delta, x0, sc, whitening)
    assert np.linalg.norm(est.position - x_true) < np.linalg.norm(x0 - x_true)


def test_estimate_position_noiseless_recovery(small_scenario, whitening, rng):
    """Wrapped-residual search recovers noiseless positions to sub-0.1 mm."""
    sc = small_scenario
    b = LinkBudget.from_dbm(0.0)
    ue = sample_ue_batch(sc, 20, derive_rng(21, "mle"))
    batch = simulate_batch(sc, b, ue, derive_rng(22, "mle"), with_noise=False)
    grid = GridSpec(101**2)
    hits = 0
    for i in range(20):
        est = estimate_position(batch.differentials[i], sc, whitening, grid,
                                steps=100, wrap_residual=True)
        hits += np.linalg.norm(est.position - ue[i]) < 1e-4
    assert hits >= 19


def test_batch_matches_scalar_path(small_scenario, whitening, rng):
    sc = small_scenario
    b = LinkBudget.from_dbm(0.0)
    ue = sample_ue_batch(sc, 8, rng)
    batch = simulate_batch(sc, b, ue, rng, with_noise=False)
    grid = GridSpec(1225)
    pos, obj = estimate_position_batch(batch.differentials, sc, whitening, grid,
                                       steps=25, wrap_residual=True)
    for i in range(8):
        est = estimate_position(batch.differentials[i], sc, whitening, grid,
                                steps=25, wrap_residual=True)
        assert np.allclose(pos[i], est.position, atol=1e-12)
        assert obj[i] == pytest.approx(est.objective_value, rel=1e-9, abs=1e-9)


def test_mle_flops_formula():
    # I=20: (I-1) residual subtractions, I(I-1) quadratic-form mul/adds
    assert mle_flops(1, 20) == 2 * 400 - 40 - 1 == 759
    assert mle_flops(1849, 20) == 1849 * 759
    assert mle_flops(4, 3) == 4 * (2 * 9 - 6 - 1)
    with pytest.raises(ValueError):
        mle_flops(0, 20)
    with pytest.raises(ValueError):
        mle_flops(10, 1)


def test_grid_for_budget_minimality():
    per = 759

    def oracle(budget):
        side = 1
        while side * side * per < budget:
            side += 1
        return side * side

    for budget in [per, per + 1, 1000, 759_000, 1_376_256, 1_147_736, 2_329_688,
                   per * 49, per * 49 + 1]:
        n = grid_for_budget(budget, 20)
        assert n == oracle(budget)
        side = math.isqrt(n)
        assert side * side == n
        assert n * per >= budget
        assert (side - 1) ** 2 * per < budget
    with pytest.raises(ValueError):
        grid_for_budget(10, 20)
