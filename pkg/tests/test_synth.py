import math

import numpy as np
import pytest

from eprcoinc.bell import chsh
from eprcoinc.coincidence import WindowSpec, find_coincidences, tabulate_cells
from eprcoinc.delay import DelayGrid, DelayModel
from eprcoinc.eventlog import SinglesTable, validate_log
from eprcoinc.synth import (GroundTruth, SyntheticConfig, expected_singles, generate,
                            lhv_probabilities, outcome_probabilities, singlet_probabilities,
                            slot_settings, splitmix64)

NARROW = WindowSpec.from_edges(3000, 4000)


def test_splitmix_reference_value():
    # first output of the reference SplitMix64 generator seeded with 0
    assert int(splitmix64(np.uint64(0))) == 0xE220A8397B1DCDAF


def test_slot_settings_balanced_and_side_specific():
    s = np.arange(200000)
    a = slot_settings(7, "A", s)
    b = slot_settings(7, "B", s)
    assert abs(a.mean() - 0.5) < 0.01 and abs(b.mean() - 0.5) < 0.01
    assert np.mean(a == b) == pytest.approx(0.5, abs=0.01)
    assert np.array_equal(a, slot_settings(7, "A", s))


def test_singlet_correlations():
    p = singlet_probabilities((0, 45), (-22.5, 22.5))
    e = p[:, :, 0, 0] + p[:, :, 1, 1] - p[:, :, 0, 1] - p[:, :, 1, 0]
    assert abs(e[0, 0] - e[1, 0]) + abs(e[0, 1] + e[1, 1]) == pytest.approx(2 * math.sqrt(2))
    np.testing.assert_allclose(p.sum(axis=3), 0.25 * 2)  # uniform marginals


def test_outcome_models():
    p = lhv_probabilities([[0, 1], [1, 0]], [[0, 1], [0, 1]])
    assert p.sum() == pytest.approx(4)
    assert outcome_probabilities({"kind": "table", "probs": p.tolist()}).shape == (2, 2, 2, 2)
    with pytest.raises(ValueError):
        outcome_probabilities({"kind": "pr"})
    with pytest.raises(ValueError):
        outcome_probabilities({"kind": "table", "probs": [0.1] * 16})


def test_config_validation_and_json():
    cfg = SyntheticConfig(n_pairs=10, background_rate_a=5.0, seed=42)
    again = SyntheticConfig.from_json(cfg.to_json())
    assert again.to_json() == cfg.to_json()
    with pytest.raises(ValueError, match="unknown"):
        SyntheticConfig.from_dict({"bogus": 1})
    for bad in ({"duration": 0}, {"suppression": 100_000}, {"efficiency_a": [[0, 1], [1, 1]]},
                {"pair_rate": -1.0}):
        with pytest.raises(ValueError):
            SyntheticConfig(**bad).validate()
    pt = SyntheticConfig.from_dict({"delay_model": {"grid": {"width": 500, "n_bins": 8},
                                                    "point": {"bin_a": 1, "bin_b": 3}}})
    assert pt.delay_model.g_b[1, 1, 3] == 1


def test_deterministic_and_seed_sensitive():
    cfg = SyntheticConfig(pair_rate=20000, background_rate_a=3000, background_rate_b=2000, seed=5)
    a1, b1, t1 = generate(cfg)
    a2, b2, t2 = generate(cfg)
    assert np.array_equal(a1.times, a2.times) and np.array_equal(b1.results, b2.results)
    assert t1.to_csv() == t2.to_csv()
    cfg.seed = 6
    a3, _, _ = generate(cfg)
    assert not np.array_equal(a1.times, a3.times)


def test_logs_valid_and_truth_consistent():
    cfg = SyntheticConfig(pair_rate=50000, background_rate_a=1000, seed=1)
    a, b, truth = generate(cfg)
    validate_log(a)
    validate_log(b)
    assert isinstance(truth, GroundTruth)
    both = (truth.k_a >= 0) & (truth.l_b >= 0)
    # default model: Alice delay 10 ns, Bob 13.5 ns
    assert np.all(a.times[truth.k_a[truth.k_a >= 0]] - truth.emit_times[truth.k_a >= 0] == 10000)
    assert np.all(b.times[truth.l_b[both]] - a.times[truth.k_a[both]] == 3500)
    assert np.all(a.settings[truth.k_a[both]] == truth.settings[both, 0])
    assert np.all(b.results[truth.l_b[both]] == truth.results[both, 1])
    assert truth.to_csv().splitlines()[0] == "pair_id,emit_time_ps,kA,lB"


def test_suppression_gate():
    cfg = SyntheticConfig(pair_rate=10000, background_rate_a=20000, background_rate_b=20000, seed=2)
    a, b, _ = generate(cfg)
    assert np.all(a.times % 100_000 >= 14_000)
    assert np.all(b.times % 100_001 >= 14_000)


def test_allpr_finds_planted_pairs_at_low_density():
    cfg = SyntheticConfig(duration=10**12, n_pairs=5000, seed=8)
    a, b, truth = generate(cfg)
    cs = find_coincidences(a, b, NARROW, "allpr")
    assert set(zip(cs.k.tolist(), cs.l.tolist())) == truth.detected_pairs()


def test_singles_match_expectation():
    cfg = SyntheticConfig(duration=10**11, pair_rate=200000, background_rate_a=30000,
                          background_rate_b=10000, efficiency_a=[[0.9, 0.5], [0.7, 0.8]], seed=4)
    a, b, _ = generate(cfg)
    s = SinglesTable.from_logs(a, b)
    for got, exp in ((s.alice, expected_singles(cfg, "A")), (s.bob, expected_singles(cfg, "B"))):
        assert np.all(np.abs(got - exp) < 5 * np.sqrt(exp))


def test_chsh_quantum_and_local():
    q = SyntheticConfig(duration=10**12, n_pairs=20000, seed=3)
    a, b, _ = generate(q)
    rep = chsh(tabulate_cells(find_coincidences(a, b, NARROW, "allpr"), a, b))
    assert abs(rep.value_2a.value - 2 * math.sqrt(2)) < 4 * rep.value_2a.se
    lhv = {"kind": "lhv", "response_a": [[0, 1, 0, 1], [0, 0, 1, 1]], "response_b": [[0, 1, 0, 1], [0, 0, 1, 1]]}
    c = SyntheticConfig(duration=10**12, n_pairs=20000, seed=3, outcome_model=lhv)
    a, b, _ = generate(c)
    rep = chsh(tabulate_cells(find_coincidences(a, b, NARROW, "allpr"), a, b))
    assert rep.value_2a.value <= 2 + 3 * rep.value_2a.se


def test_jitter_stays_in_bin():
    grid = DelayGrid(500, 16)
    cfg = SyntheticConfig(duration=10**12, n_pairs=3000, seed=1, delay_jitter=True, suppression=0,
                          delay_model=DelayModel.point_masses(grid, 2, 5))
    a, b, truth = generate(cfg)
    ok = truth.k_a >= 0
    d = a.times[truth.k_a[ok]] - truth.emit_times[ok]
    assert d.min() > 1000 and d.max() <= 1500 and len(np.unique(d)) > 100
