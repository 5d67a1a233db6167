import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import eval_hermite

from rydplasma.toymodel import (NormDriftError, ToyConfig, ToyTrace, free_packet_se_width,
                                free_packet_width, ho_eigenfunction, r_of_t, se_evolve,
                                sup_difference, toy_forces, toy_potential, twa_toy, write_traces)
from rydplasma.units import InvalidParameter

CFG = ToyConfig()
SHORT = ToyConfig(periods=0.25, n_out=10, grid=(128, 64))


def test_r_of_t_endpoints():
    assert r_of_t(0.0, CFG) == pytest.approx(CFG.r_far, rel=1e-12)
    assert r_of_t(0.5 * CFG.t_final, CFG) == pytest.approx(CFG.r_close, rel=1e-12)
    assert r_of_t(CFG.t_final, CFG) == pytest.approx(CFG.r_far, rel=1e-12)
    with pytest.warns(UserWarning, match="clamped"):
        assert r_of_t(-1.0, CFG) == pytest.approx(CFG.r_far)


@given(st.floats(-50, 50), st.floats(10, 200))
def test_potential_vanishes_at_x1_zero(x2, R):
    assert toy_potential(0.0, x2, R, CFG) == pytest.approx(0.0, abs=1e-14)


def test_potential_is_cubic_in_x1():
    cfg = ToyConfig(soft_core_fraction=0.0)
    R = cfg.r_close
    for x1 in (1e-2 * R, 5e-3 * R):
        v = toy_potential(x1, 0.0, R, cfg)
        assert v / x1**3 == pytest.approx(2 * cfg.kc / R**4, rel=1e-3)


def test_forces_are_minus_gradient():
    R, x1, x2 = 0.7 * CFG.r_close, 3.0 * CFG.d_h, -2.0 * CFG.d_h
    h = 1e-5 * CFG.d_h
    g1 = (toy_potential(x1 + h, x2, R, CFG) - toy_potential(x1 - h, x2, R, CFG)) / (2 * h)
    g2 = (toy_potential(x1, x2 + h, R, CFG) - toy_potential(x1, x2 - h, R, CFG)) / (2 * h)
    f1, f2 = toy_forces(x1, x2, R, CFG)
    assert f1 == pytest.approx(-g1, rel=1e-6)
    assert f2 == pytest.approx(-g2, rel=1e-6)


@pytest.mark.parametrize("n", [0, 1, 4, 9])
def test_eigenfunction_matches_hermite(n):
    x = np.linspace(-5, 5, 11)
    ref = (eval_hermite(n, x) * np.exp(-x * x / 2)
           / math.sqrt(2.0**n * math.factorial(n) * math.sqrt(math.pi)))
    np.testing.assert_allclose(ho_eigenfunction(n, x), ref, atol=1e-12)


def test_eigenfunctions_orthonormal_large_n():
    x = np.linspace(-20, 20, 8001)
    dx = x[1] - x[0]
    a, b = ho_eigenfunction(36, x, 1.0), ho_eigenfunction(37, x, 1.0)
    assert np.sum(a * a) * dx == pytest.approx(1.0, abs=1e-10)
    assert abs(np.sum(a * b) * dx) < 1e-10


def test_free_packet_spreading():
    w = free_packet_se_width(CFG, CFG.t_final, n_points=512)
    assert w == pytest.approx(free_packet_width(CFG.t_final, CFG.sigma0, CFG.mass), rel=1e-6)


def test_uncoupled_state_is_stationary():
    tr = se_evolve(ToyConfig(q2=0.0, periods=1.0, n_out=20, grid=(128, 32)))
    np.testing.assert_allclose(tr.p0, 1.0, atol=1e-10)
    assert tr.norm_drift < 1e-10


def test_uncoupled_twa_is_stationary():
    tr = twa_toy(ToyConfig(q2=0.0, periods=0.5, n_out=5), 2000, 1)
    np.testing.assert_allclose(tr.p0, tr.p0[0], atol=1e-4)
    assert abs(tr.p0[0] - 1.0) <= 3 * tr.stderr[0]


def test_se_norm_drift_guard():
    with pytest.raises(NormDriftError):
        se_evolve(SHORT, drift_abort=1e-18)


def test_twa_variance_scales_as_one_over_n():
    small = twa_toy(SHORT, 1000, 3)
    large = twa_toy(SHORT, 4000, 4)
    ratio = small.stderr[-1] / large.stderr[-1]
    assert ratio == pytest.approx(2.0, rel=0.15)


def test_sup_difference_and_csv(tmp_path):
    se = ToyTrace(np.linspace(0, 1, 11), np.linspace(1, 0.5, 11))
    twa = ToyTrace(np.array([0.0, 0.5, 1.0]), np.array([1.0, 0.7, 0.5]), np.zeros(3))
    assert sup_difference(se, twa) == pytest.approx(0.05)
    path = tmp_path / "toy.csv"
    write_traces(path, se, twa)
    lines = path.read_text().splitlines()
    assert lines[0] == "t_over_T,P0_SE,P0_TWA,stderr" and len(lines) == 4


def test_config_validation():
    with pytest.raises(InvalidParameter):
        ToyConfig(rc_over_dh=200.0)
    with pytest.raises(InvalidParameter):
        ToyConfig(dt_safety=1.5)
    with pytest.raises(InvalidParameter):
        ToyConfig(x1_half=3.0)
    assert ToyConfig().n_osc == 36
