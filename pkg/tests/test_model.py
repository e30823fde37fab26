import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pass_opt.model import (ActivationPattern, Geometry, Scenario, build_channels, build_geometry,
                            channel_table, dbm_to_watts, effective_channel, in_waveguide_phases,
                            reference_gain, sinr_of, watts_to_dbm)

from instances import channels, scenario


def test_feed_points_follow_half_span_rule():
    sc = Scenario(2, 1, 4, span_x=10, span_y=10, user_positions=[(1, 1)])
    geo = build_geometry(sc)
    assert geo.feed_points[:, 1].tolist() == [5.0, 10.0]
    assert np.all(geo.feed_points[:, 0] == 0)


def test_single_antenna_sits_mid_span():
    sc = Scenario(1, 1, 1, span_x=8, user_positions=[(0, 0)])
    assert build_geometry(sc).antenna_positions[0, 0, 0] == pytest.approx(4.0)


def test_cell_centered_grid():
    sc = Scenario(1, 1, 4, span_x=8, user_positions=[(0, 0)])
    np.testing.assert_allclose(build_geometry(sc).antenna_positions[0, :, 0], [1, 3, 5, 7])


def test_wavelengths():
    sc = Scenario(1, 1, 2)
    assert sc.carrier_wavelength == pytest.approx(0.02)
    assert sc.guided_wavelength == pytest.approx(0.0142857, rel=1e-5)


def test_reference_gain_value():
    phi = reference_gain(15e9)
    assert phi == pytest.approx(1.5915e-3, rel=1e-4)
    assert math.sqrt(phi) == pytest.approx(0.039894, rel=1e-4)


def test_modulus_directly_above_user():
    sc = Scenario(1, 1, 1, span_x=10, span_y=10, user_positions=[(5.0, 5.0)])
    ch = build_channels(sc)
    assert abs(ch.free_space[0, 0, 0]) == pytest.approx(7.9789e-3, rel=1e-4)


def test_equidistant_antennas_have_equal_modulus():
    sc = Scenario(1, 1, 2, span_x=10, span_y=10, user_positions=[(5.0, 3.0)])
    h = build_channels(sc).free_space[0, :, 0]
    assert abs(h[0]) == pytest.approx(abs(h[1]), rel=1e-13)
    assert h[0] == pytest.approx(h[1], rel=1e-9)


def _geo_with_feed_distance(d, lam_w):
    pos = np.array([[[d, 0.0, 0.0]]])
    return Geometry(pos, np.zeros((1, 3)), np.ones((1, 3)), lam_w, 0.02)


@pytest.mark.parametrize("frac, expected", [(0.0, 1.0), (1.0, 1.0), (0.5, -1.0)])
def test_in_waveguide_phase_periodicity(frac, expected):
    lam_w = 0.02 / 1.4
    g = in_waveguide_phases(_geo_with_feed_distance(frac * lam_w, lam_w))[0, 0]
    assert g == pytest.approx(expected, abs=1e-12)


def test_unit_modulus_in_waveguide():
    _, ch = channels(seed=3)
    assert np.max(np.abs(np.abs(ch.in_waveguide) - 1)) < 1e-12


def test_modulus_decreases_with_distance():
    sc, ch = channels(seed=5)
    d = build_geometry(sc).user_distances.reshape(-1)
    m = np.abs(ch.free_space).reshape(-1)
    order = np.argsort(d)
    assert np.all(np.diff(m[order]) <= 0)


def test_single_active_antenna_gives_its_coefficient():
    sc, ch = channels(seed=1)
    coef = ch.coefficients()
    a = np.zeros((2, 6), dtype=int)
    a[0, 2] = a[1, 4] = 1
    heff = effective_channel(ch, ActivationPattern(a))
    np.testing.assert_allclose(heff[:, 0], coef[:, 0, 2])
    np.testing.assert_allclose(heff[:, 1], coef[:, 1, 4])


def test_empty_waveguide_gives_zero():
    _, ch = channels(seed=1)
    a = np.zeros((2, 6), dtype=int)
    a[0, 0] = 1
    assert np.all(effective_channel(ch, ActivationPattern(a))[:, 1] == 0)


def test_two_cophased_antennas_gain_sqrt2():
    coef = np.full((1, 1, 2), 0.3 + 0.4j)
    heff = effective_channel(coef, ActivationPattern(np.ones((1, 2), dtype=int)))
    assert abs(heff[0, 0]) == pytest.approx(math.sqrt(2) * 0.5)


def test_effective_channel_matches_matrix_product(rng):
    K, N, L = 3, 2, 5
    coef = rng.normal(size=(K, N, L)) + 1j * rng.normal(size=(K, N, L))
    a = rng.integers(0, 2, size=(N, L))
    a[:, 0] = 1
    pat = ActivationPattern(a)
    w = rng.normal(size=N) + 1j * rng.normal(size=N)
    # literal G A w with the block layout: antenna (n, l) carries beta * w_n
    amp = np.zeros(N * L, dtype=complex)
    for n in range(N):
        for l in range(L):
            amp[n * L + l] = a[n, l] / math.sqrt(a[n].sum()) * w[n]
    direct = coef.reshape(K, N * L) @ amp
    np.testing.assert_allclose(effective_channel(coef, pat) @ w, direct, rtol=1e-10)


def test_single_user_sinr_has_no_interference(rng):
    h = rng.normal(size=(1, 3)) + 1j * rng.normal(size=(1, 3))
    w = rng.normal(size=(3, 1)) + 1j * rng.normal(size=(3, 1))
    assert sinr_of(w, h, 0.1)[0] == pytest.approx(abs(h[0] @ w[:, 0]) ** 2 / 0.1)


def test_orthogonal_beam_has_zero_signal():
    h = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=complex)
    W = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    assert np.all(sinr_of(W, h, 1.0) == 0)


def test_sinr_matches_term_by_term_expansion(rng):
    K, N = 3, 4
    h = rng.normal(size=(K, N)) + 1j * rng.normal(size=(K, N))
    W = rng.normal(size=(N, K)) + 1j * rng.normal(size=(N, K))
    for k in range(K):
        sig = abs(sum(h[k, n] * W[n, k] for n in range(N))) ** 2
        intf = sum(abs(sum(h[k, n] * W[n, j] for n in range(N))) ** 2 for j in range(K) if j != k)
        assert sinr_of(W, h, 0.5)[k] == pytest.approx(sig / (intf + 0.5), rel=1e-12)


@given(st.floats(0.01, 100.0))
def test_single_user_sinr_increases_with_scale(t):
    h = np.array([[1.0 + 1j, 0.5]])
    w = np.array([[0.3], [0.2 - 0.1j]])
    base = sinr_of(w, h, 1.0)[0]
    scaled = sinr_of(t * w, h, 1.0)[0]
    assert scaled == pytest.approx(t * t * base, rel=1e-12)
    if t > 1:
        assert scaled > base


def test_noise_dbm_parses_to_watts():
    assert float(dbm_to_watts(-80)) == pytest.approx(1e-11, rel=1e-12)


@given(st.floats(1e-15, 1e3))
def test_dbm_roundtrip(p):
    assert float(dbm_to_watts(watts_to_dbm(p))) == pytest.approx(p, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 8), st.integers(0, 2**31))
def test_coefficients_shape_and_unit_phase(N, K, L, seed):
    sc = scenario("paper-small", seed, 0, num_waveguides=N, num_users=K, antennas_per_waveguide=L)
    ch = build_channels(sc)
    assert ch.coefficients().shape == (K, N, L)
    np.testing.assert_allclose(np.abs(ch.coefficients()), np.transpose(np.abs(ch.free_space), (2, 0, 1)))


def test_pattern_string_and_counts():
    pat = ActivationPattern.from_pairs([(0, 0), (2, 0), (1, 1)], 2, 3)
    assert str(pat) == "101|010"
    assert pat.counts.tolist() == [2, 1]


def test_invalid_scenarios():
    with pytest.raises(ValueError):
        Scenario(0, 1, 1)
    with pytest.raises(ValueError):
        Scenario(1, 1, 1000, span_x=10)  # spacing below the carrier wavelength
    with pytest.raises(ValueError):
        Scenario(1, 2, 1, user_positions=[(0, 0)])
    with pytest.raises(ValueError):
        ActivationPattern(np.array([[2, 0]]))


def test_channel_table_rows():
    sc, ch = channels(seed=2, antennas_per_waveguide=3)
    text = channel_table(build_geometry(sc), ch)
    lines = text.strip().splitlines()
    assert lines[0] == "l,n,k,distance_m,abs_h,arg_h"
    assert len(lines) == 1 + 2 * 3 * 2
