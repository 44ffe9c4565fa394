import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_log
from eprcoinc.coincidence import CELLS, WindowSpec, count_coincidences
from eprcoinc.delay import (DelayGrid, DelayModel, _check_monotone, align_to, binned_prediction,
                            brute_force_dt_densities, brute_force_dt_density, cell_index,
                            estimate_density, estimated_densities, fit_delay_model, fit_objective,
                            observed_dt_densities, plot_data_csv, predict_dt_density, report_json,
                            solve_side, total_variation, tv_distances)
from eprcoinc.synth import SyntheticConfig, generate


def dists(n, rng):
    g = rng.random((2, 2, n)) ** 4
    return g / g.sum(axis=-1, keepdims=True)


def test_grid_and_model_validation():
    g = DelayGrid(500, 8, origin=-1000)
    assert g.first_allowed == 2 and g.times()[0] == -500
    with pytest.raises(ValueError):
        DelayGrid(500, 2, origin=-5000)
    with pytest.raises(ValueError):
        DelayGrid(0, 4)
    m = DelayModel.point_masses(DelayGrid(500, 8), 1, 3)
    m.check()
    bad = DelayModel(g, np.full((2, 2, 8), 1 / 8), np.full((2, 2, 8), 1 / 8))
    with pytest.raises(ValueError, match="t <= 0"):
        bad.check()
    with pytest.raises(ValueError, match="sums"):
        DelayModel(DelayGrid(500, 4), np.full((2, 2, 4), 0.3), np.full((2, 2, 4), 0.25)).check()


def test_convolution_hand_example():
    grid = DelayGrid(500, 4)
    ga = np.zeros((2, 2, 4))
    gb = np.zeros((2, 2, 4))
    ga[..., 1] = 1
    gb[..., 1] = 0.5
    gb[..., 3] = 0.5
    f = predict_dt_density(DelayModel(grid, ga, gb), (0, 0, 0, 0))
    # lags -3..3: mass at 0 and +2
    assert f.tolist() == [0, 0, 0, 0.5, 0, 0.5, 0]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 12))
def test_convolution_matches_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    m = DelayModel(DelayGrid(500, n), dists(n, rng), dists(n, rng))
    for c in CELLS:
        f = predict_dt_density(m, c)
        np.testing.assert_allclose(f, brute_force_dt_density(m, c), atol=1e-15)
        assert f.sum() == pytest.approx(1)


def test_observed_densities_match_brute_force(rng):
    a = random_log(rng, "A", 200, 100000)
    b = random_log(rng, "B", 200, 100000)
    w = WindowSpec.from_edges(-5000, 7000)
    fast = observed_dt_densities(a, b, w, 500)
    slow = brute_force_dt_densities(a, b, w, 500)
    assert np.array_equal(fast.values, slow.values)
    assert fast.values.sum() == count_coincidences(a, b, w)
    with pytest.raises(ValueError):
        observed_dt_densities(a, b, w, 700)


def test_integral_identity():
    # per-cell totals of the estimate equal W_T + W_F whenever the lag support fits in the window
    rng = np.random.default_rng(1)
    n = 10
    m = DelayModel(DelayGrid(500, n), dists(n, rng), dists(n, rng))
    w = WindowSpec.from_edges(-(n - 1) * 500, n * 500)
    wt = rng.uniform(10, 1000, 16)
    wf = rng.uniform(0, 50, 16)
    est = estimated_densities(m, w, 500, wt, wf)
    np.testing.assert_allclose(est.values.sum(axis=1), wt + wf, rtol=1e-12)
    assert estimate_density(np.array([0.5, 0.5, 0]), 10, 3).tolist() == [6, 6, 1]


def test_binned_prediction_sums_to_window_mass():
    n = 6
    m = DelayModel.point_masses(DelayGrid(500, n), 0, 5)
    w = WindowSpec.from_edges(-1000, 1000)
    # lag +5 bins = 2.5 ns lies outside the window
    assert binned_prediction(m, w, 500).sum() == 0
    w2 = WindowSpec.from_edges(2000, 3000)
    p = binned_prediction(m, w2, 500)
    assert p[:, 1].tolist() == [1.0] * 16


def test_align_and_tv():
    g = DelayGrid(500, 16)
    m = DelayModel.point_masses(g, 3, 7)
    assert align_to(m.shifted(4), m)[1] == -4
    assert tv_distances(m.shifted(4), m) == [0.0] * 8
    assert total_variation(np.array([1, 0]), np.array([0, 1])) == 1
    with pytest.raises(ValueError):
        m.shifted(-4)
    c = m.shifted(5).canonical()
    assert c.g_a[0, 0, 0] == 1 and c.g_b[0, 0, 4] == 1


def test_monotone_guard():
    _check_monotone(10, 10)
    _check_monotone(np.inf, 5)
    with pytest.raises(AssertionError):
        _check_monotone(10, 10.01)


@pytest.fixture(scope="module")
def small_fit():
    n = 24
    grid = DelayGrid(500, n)
    planted = DelayModel.point_masses(grid, 4, 9)
    ga = planted.g_a.copy()
    gb = planted.g_b.copy()
    ga[1, 1] = 0
    ga[1, 1, 6] = 1
    gb[0, 1] = 0
    gb[0, 1, [11, 12]] = 0.5
    planted = DelayModel(grid, ga, gb)
    cfg = SyntheticConfig(duration=10**12, n_pairs=20000, seed=3, suppression=0, delay_model=planted)
    a, b, _ = generate(cfg)
    w = WindowSpec.from_edges(-(n - 1) * 500, n * 500)
    obs = observed_dt_densities(a, b, w, 500)
    wt = obs.values.sum(axis=1)
    wf = np.zeros(16)
    model, rep = fit_delay_model(obs, wt, wf, grid)
    return planted, obs, wt, wf, model, rep


def test_fit_recovers_small_planted_model(small_fit):
    planted, obs, wt, wf, model, rep = small_fit
    model.check()
    assert max(tv_distances(model, planted)) < 0.02
    assert all(b <= a + 1e-7 * max(1, a) for a, b in zip(rep.history, rep.history[1:]))
    assert rep.objective == pytest.approx(fit_objective(model, obs, wt, wf)[0], rel=1e-6)
    est = estimated_densities(model, obs.window, 500, wt, wf)
    np.testing.assert_allclose(est.cell_totals(), obs.cell_totals(), rtol=1e-9)


def test_fit_reports(small_fit):
    planted, obs, wt, wf, model, rep = small_fit
    d = json.loads(report_json(model, rep))
    assert d["converged"] and d["reason"] in ("distributions", "objective")
    assert len(d["cell_l1_error"]) == 16
    csv = plot_data_csv(obs, estimated_densities(model, obs.window, 500, wt, wf))
    lines = csv.splitlines()
    assert lines[0] == "sA,sB,rA,rB,dt_ns,observed,calculated"
    assert len(lines) == 1 + 16 * obs.n_bins
    files = model.to_csv()
    assert set(files) == {f"g{s}_{a}_{b}" for s in "AB" for a in (0, 1) for b in (0, 1)}


def test_half_step_never_worsens(small_fit):
    planted, obs, wt, wf, *_ = small_fit
    m = DelayModel.point_masses(planted.grid, 2, 2)
    before = fit_objective(m, obs, wt, wf)[0]
    m2, after = solve_side(obs, wt, wf, m, "B")
    assert after <= before
    m3, after2 = solve_side(obs, wt, wf, m2, "A", coupled=False)
    assert after2 <= after + 1e-7 * after
    assert cell_index(1, 1, 1, 1) == 15


def test_coupled_equals_decoupled(small_fit):
    planted, obs, wt, wf, model, _ = small_fit
    start = DelayModel.point_masses(planted.grid, 3, 8)
    for side in "AB":
        _, joint = solve_side(obs, wt, wf, start, side, coupled=True)
        _, split = solve_side(obs, wt, wf, start, side, coupled=False)
        assert joint == pytest.approx(split, rel=1e-9)
