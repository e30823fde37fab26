import math

import numpy as np
import pytest

from pass_opt.bnb_mu import bnb_multi_user
from pass_opt.bnb_su import bnb_single_user, closed_form_power
from pass_opt.harness import (ExperimentSpec, ResultRecord, apply_sweep, baseline_channels, baseline_mimo,
                              continuous_grid_search, exhaustive_oracle, preset, results_csv, run_experiment,
                              summarize, trial_users)
from pass_opt.model import ActivationPattern, Scenario, build_channels, effective_channel, watts_to_dbm
from pass_opt.socp import socp_fixed_activation

from instances import scenario


def test_paper_small_preset():
    sc = preset("paper-small")
    assert (sc.num_waveguides, sc.num_users, sc.antennas_per_waveguide) == (2, 2, 6)
    assert sc.sinr_min == pytest.approx(100.0)
    with pytest.raises(ValueError):
        preset("nope")


def test_single_user_baseline_is_mrt():
    sc = scenario("single-user", seed=3)
    h = baseline_channels(sc)
    p, _ = baseline_mimo(sc)
    assert p == pytest.approx(sc.noise_power * sc.sinr_min / np.linalg.norm(h) ** 2, rel=1e-10)


def test_far_user_costs_more():
    near = preset("single-user").with_users([(1.0, 1.0)])
    far = preset("single-user").with_users([(14.0, 14.0)])
    assert baseline_mimo(far)[0] > baseline_mimo(near)[0]


def test_baseline_array_orientation():
    sc = scenario(seed=1)
    assert baseline_channels(sc, "x").shape == (2, 2)
    with pytest.raises(ValueError):
        baseline_channels(sc, "z")


def test_grid_with_one_point_is_midpoint():
    sc = Scenario(1, 1, 1, span_x=10, user_positions=[(2.0, 5.0)])
    p, coords = continuous_grid_search(sc, 1, grid_points=1)
    assert coords[0].tolist() == [5.0]


def test_grid_places_single_antenna_above_user():
    sc = Scenario(1, 1, 1, span_x=10, span_y=10, user_positions=[(3.1, 5.0)])
    _, coords = continuous_grid_search(sc, 1, grid_points=50)
    assert coords[0][0] == pytest.approx(3.1, abs=0.1 + 1e-9)


def test_grid_containing_lattice_is_no_worse():
    sc = Scenario(1, 1, 5, span_x=10, span_y=10, user_positions=[(6.3, 2.0)])
    ch = build_channels(sc)
    best = min(closed_form_power(ActivationPattern(np.eye(5, dtype=int)[[l]]), ch, sc.sinr_min, sc.noise_power)
               for l in range(5))
    p, _ = continuous_grid_search(sc, 1, grid_points=5)
    assert p <= best * (1 + 1e-9)


def test_exhaustive_oracle_single_user_ranking_matches_socp():
    sc = scenario("single-user", seed=2, antennas_per_waveguide=3)
    pat, p = exhaustive_oracle(sc)
    ch = build_channels(sc)
    status, q, _ = socp_fixed_activation(effective_channel(ch, pat), sc.sinr_min, sc.noise_power)
    assert q == pytest.approx(p, rel=1e-6)
    assert p == pytest.approx(bnb_single_user(ch, sc.sinr_min, sc.noise_power).power, rel=1e-9)


def test_exhaustive_oracle_agrees_with_bnb():
    sc = scenario(seed=3, antennas_per_waveguide=3)
    _, p = exhaustive_oracle(sc)
    r = bnb_multi_user(build_channels(sc), sc.sinr_min, sc.noise_power)
    assert abs(p - r.power) <= 1e-6 * sc.noise_power * sc.sinr_min


def test_exhaustive_limit():
    with pytest.raises(ValueError):
        exhaustive_oracle(scenario(antennas_per_waveguide=8))
    with pytest.raises(ValueError):
        ExperimentSpec(preset("paper-small", antennas_per_waveguide=8), solvers=("exhaustive",))


def test_unknown_solver_and_sweep_rejected():
    with pytest.raises(ValueError):
        ExperimentSpec(preset("paper-small"), solvers=("magic",))
    with pytest.raises(ValueError):
        apply_sweep(preset("paper-small"), "colour", 1)
    with pytest.raises(ValueError):
        ExperimentSpec(preset("paper-small"), sweep_key="L", sweep_values=(100000,))


def test_empty_sweep_gives_header_only():
    spec = ExperimentSpec(preset("paper-small"), sweep_key="sinr_db", sweep_values=())
    recs, _ = run_experiment(spec)
    assert recs == []
    assert results_csv(recs) == ",".join(ResultRecord.CSV_FIELDS) + "\n"


def test_same_seed_same_csv():
    spec = ExperimentSpec(preset("paper-small", antennas_per_waveguide=3), solvers=("matching", "exhaustive"),
                          sweep_key="sinr_db", sweep_values=(10, 20), trials=2, seed=9)
    a = results_csv(run_experiment(spec)[0])
    b = results_csv(run_experiment(spec)[0])
    assert a == b


def test_threads_do_not_change_output(monkeypatch):
    spec = ExperimentSpec(preset("paper-small", antennas_per_waveguide=3), solvers=("matching",),
                          trials=4, seed=1)
    serial = results_csv(run_experiment(spec, threads=1)[0])
    monkeypatch.setenv("PASS_OPT_THREADS", "3")
    assert results_csv(run_experiment(spec)[0]) == serial


def test_users_are_paired_across_sweep_values():
    a = trial_users(preset("paper-small", span_x=5.0), 4, 2)
    b = trial_users(preset("paper-small", span_x=10.0), 4, 2)
    np.testing.assert_allclose(np.array(b.user_positions)[:, 0], 2 * np.array(a.user_positions)[:, 0])
    np.testing.assert_allclose(np.array(b.user_positions)[:, 1], np.array(a.user_positions)[:, 1])


def test_record_dbm_consistent_and_summary():
    spec = ExperimentSpec(preset("paper-small", antennas_per_waveguide=3), solvers=("matching", "baseline-mimo"),
                          trials=3, seed=2)
    recs, _ = run_experiment(spec)
    for r in recs:
        assert r.power_dbm == pytest.approx(float(watts_to_dbm(r.power_w)), rel=1e-12)
    rows = summarize(recs)
    assert [r[1] for r in rows] == ["matching", "baseline-mimo"]
    for _, _, n, mean, lo, hi in rows:
        assert n == 3 and lo <= mean <= hi


def test_trial_failures_are_recorded():
    sc = preset("paper-small", antennas_per_waveguide=3)
    spec = ExperimentSpec(sc, solvers=("bnb-su",), trials=1)
    recs, _ = run_experiment(spec)
    assert recs[0].status.startswith("error")
    assert math.isnan(recs[0].power_w)


def test_sinr_sweep_increases_power():
    spec = ExperimentSpec(preset("paper-small", antennas_per_waveguide=4),
                          solvers=("matching", "baseline-mimo", "exhaustive"),
                          sweep_key="sinr_db", sweep_values=(10, 15, 20, 25), trials=2, seed=6)
    recs, _ = run_experiment(spec)
    for solver in spec.solvers:
        for t in range(2):
            p = [r.power_w for r in recs if r.solver == solver and r.trial == t]
            assert all(b > a for a, b in zip(p, p[1:]))


def test_dominance_chain():
    eps_rel = 1e-9
    spec = ExperimentSpec(preset("paper-small", antennas_per_waveguide=3),
                          solvers=("exhaustive", "bnb-mu", "matching"), trials=3, seed=13)
    recs, _ = run_experiment(spec)
    for t in range(3):
        ex, bnb, m = (next(r.power_w for r in recs if r.trial == t and r.solver == s) for s in spec.solvers)
        sc = trial_users(spec.scenario, 13, t)
        assert ex <= bnb + 1e-6 * sc.noise_power * sc.sinr_min
        assert bnb <= m * (1 + eps_rel) + 1e-6 * sc.noise_power * sc.sinr_min
