import math

import numpy as np
import pytest

from pass_opt.bnb_mu import (bnb_multi_user, branch_mixed, certificate, evaluate_pattern,
                             exhaustive_multi_user, round_activation, upper_bound_from_projection)
from pass_opt.bnb_su import BnBState, Box, bnb_single_user, closed_form_power
from pass_opt.model import ActivationPattern

from instances import channels, mu_instances


def test_continuous_only_box_splits_longest_at_midpoint():
    lo = np.array([1.0, -1.0, -0.5])
    up = np.array([1.0, 1.0, 0.5])
    st_ = BnBState(boxes=[Box(lo, up, 0)], nodes=1)
    a, b = branch_mixed(st_, M=1)
    assert a.upper[1] == 0.0 and b.lower[1] == 0.0
    assert a.upper[2] == 0.5


def test_binary_edge_beats_shorter_continuous():
    st_ = BnBState(boxes=[Box(np.array([0.0, 0.0]), np.array([1.0, 0.5]), 0)], nodes=1)
    a, b = branch_mixed(st_, M=1)
    assert a.upper[0] == 0.0 and b.lower[0] == 1.0


def test_binary_wins_exact_tie():
    st_ = BnBState(boxes=[Box(np.array([0.0, -0.5]), np.array([1.0, 0.5]), 0)], nodes=1)
    a, _ = branch_mixed(st_, M=1)
    assert a.upper[0] == 0.0


def test_child_volumes():
    lo = np.array([0.0, 0.0, -1.0])
    up = np.array([0.0, 1.0, 1.0])
    st_ = BnBState(boxes=[Box(lo, up, 0)], nodes=1)
    a, b = branch_mixed(st_, M=2)
    # the length-2 continuous edge outranks the length-1 binary one
    assert a.upper[2] == 0.0
    assert np.prod(a.edges[2:]) + np.prod(b.edges[2:]) == pytest.approx(np.prod((up - lo)[2:]))


def test_rounding_keeps_waveguides_nonempty():
    pat = round_activation(np.array([0.2, 0.4, 0.9, 0.1]), np.zeros(4), np.ones(4), 2, 2)
    assert pat.a.tolist() == [[0, 1], [1, 0]]


def test_rounding_respects_fixings():
    pat = round_activation(np.array([0.9, 0.9]), np.array([0.0, 0.0]), np.array([0.0, 1.0]), 1, 2)
    assert pat.a.tolist() == [[0, 1]]
    assert round_activation(np.zeros(2), np.zeros(2), np.zeros(2), 1, 2) is None


def test_upper_bound_equals_pattern_optimum():
    sc, ch = channels(seed=3, antennas_per_waveguide=3)
    coef = ch.coefficients()
    a = np.array([1, 0, 1, 0, 1, 1], dtype=float)
    pat, D, p = upper_bound_from_projection(a, np.zeros(6), np.ones(6), coef, sc.sinr_min, sc.noise_power)
    assert p == pytest.approx(evaluate_pattern(coef, pat, sc.sinr_min, sc.noise_power).power)


def test_upper_bound_single_user_equals_closed_form():
    sc, ch = channels("single-user", seed=3, antennas_per_waveguide=3)
    coef = ch.coefficients()
    a = np.array([1, 1, 0, 0, 1, 0], dtype=float)
    pat, _, p = upper_bound_from_projection(a, np.zeros(6), np.ones(6), coef, sc.sinr_min, sc.noise_power)
    assert p == pytest.approx(closed_form_power(pat, coef, sc.sinr_min, sc.noise_power), rel=1e-9)


def test_infeasible_targets_leave_gub_infinite():
    coef = np.ones((2, 1, 2), dtype=complex) * 1e-3  # identical users on one waveguide
    pat, _, p = upper_bound_from_projection(np.ones(2), np.zeros(2), np.ones(2), coef, 100.0, 1e-11)
    assert math.isinf(p)
    with pytest.raises(ValueError):
        bnb_multi_user(coef, 100.0, 1e-11)


@pytest.mark.parametrize("trial", range(3))
def test_single_user_agrees_with_su_search(trial):
    sc, ch = channels("single-user", seed=17, trial=trial, antennas_per_waveguide=3)
    eps = 1e-6 * sc.noise_power * sc.sinr_min
    mu = bnb_multi_user(ch, sc.sinr_min, sc.noise_power)
    su = bnb_single_user(ch, sc.sinr_min, sc.noise_power)
    assert mu.status == "optimal"
    assert abs(mu.power - su.power) <= eps


def test_matches_exhaustive_and_traces_are_monotone():
    for sc, ch in mu_instances(4, L=3, seed=99):
        eps = 1e-6 * sc.noise_power * sc.sinr_min
        r = bnb_multi_user(ch, sc.sinr_min, sc.noise_power)
        _, p, _ = exhaustive_multi_user(ch, sc.sinr_min, sc.noise_power)
        assert r.status == "optimal"
        assert abs(r.power - p) <= eps
        gubs = [t[1] for t in r.trace]
        glbs = [t[2] for t in r.trace]
        assert all(b <= a for a, b in zip(gubs, gubs[1:]))
        assert all(b >= a for a, b in zip(glbs, glbs[1:]))
        assert r.gap <= eps
        assert r.certificate_violations == 0
        assert r.iterations <= r.certificate.t_max
        assert np.sum(np.abs(r.W) ** 2) == pytest.approx(r.power, rel=1e-8)
        D = r.W / np.sqrt(r.pattern.counts)[:, None]
        assert np.sum(r.pattern.counts[:, None] * np.abs(D) ** 2) == pytest.approx(r.power, rel=1e-8)


def test_power_vanishes_with_sinr_target():
    sc, ch = channels(seed=1, antennas_per_waveguide=2)
    hi = bnb_multi_user(ch, 1.0, sc.noise_power)
    lo = bnb_multi_user(ch, 1e-4, sc.noise_power)
    assert lo.power < 1e-3 * hi.power


def test_certificate_unit_threshold():
    M, N, K, P0 = 6, 2, 2, 0.5
    B = M + 2 * N * K
    c = certificate(M, N, K, P0, math.sqrt(2 * M * P0 * B))
    assert c.xi == pytest.approx(1.0)


def test_certificate_scaling_in_budget():
    a = certificate(6, 2, 2, 1.0, 1e-9)
    b = certificate(6, 2, 2, 2.0, 1e-9)
    assert b.xi == pytest.approx(a.xi / math.sqrt(2))
    assert b.log10_t_max > a.log10_t_max
    with pytest.raises(ValueError):
        certificate(0, 1, 1, 1.0, 1.0)


def test_budget_stop_is_reported():
    sc, ch = channels(seed=2, antennas_per_waveguide=3)
    r = bnb_multi_user(ch, sc.sinr_min, sc.noise_power, max_iter=1)
    assert r.iterations <= 1
    assert r.status in ("budget", "optimal")
    assert r.glb <= r.gub


def test_exhaustive_enumeration_counts():
    coef = np.array([[[1e-3, 2e-3]]], dtype=complex)
    _, p, _ = exhaustive_multi_user(coef, 10.0, 1e-10)
    cands = [closed_form_power(ActivationPattern(np.array([bits])), coef[0], 10.0, 1e-10)
             for bits in ([0, 1], [1, 0], [1, 1])]
    assert p == pytest.approx(min(cands), rel=1e-10)
    with pytest.raises(ValueError):
        exhaustive_multi_user(np.ones((1, 3, 5), dtype=complex), 1.0, 1.0)
