import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from rydplasma.coupled import (NEVER, TransferTrace, compensate_thermalization, coupled_transfer,
                               coupling_constant, first_zero_crossing, fit_thermalization,
                               screened_coupling_ratio, transfer_time, vacuum_energy_curves,
                               vacuum_transfer_time)
from rydplasma.units import InvalidParameter, PlasmaParams


@given(st.floats(1.0, 1e4))
def test_doubling_separation_weakens_coupling_eightfold(D):
    assert coupling_constant(2 * D) == pytest.approx(coupling_constant(D) / 8, rel=1e-12)


def test_transfer_time_formula():
    assert transfer_time(2.0, 0.5, 0.25) == pytest.approx(math.pi * 4.0)
    assert transfer_time(1.0, 1.0, 0.0) == NEVER
    with pytest.raises(InvalidParameter):
        coupling_constant(0.0)


@given(st.floats(0.01, 5.0))
def test_screened_coupling_closed_form(x):
    # a z dipole seen broadside: the ratio reduces to exp(-x)(1 + x)
    assert screened_coupling_ratio(x, 1.0) == pytest.approx(math.exp(-x) * (1 + x), rel=1e-10)


def test_vacuum_curves_match_fock_evolution():
    m, w, g = 1.0, 1.0, 0.05
    n1, dim = 2, 14
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    eye = np.eye(dim)
    x = (a + a.T) / math.sqrt(2 * m * w)
    num = a.T @ a
    H1 = np.kron(w * (num + 0.5 * eye), eye)
    H2 = np.kron(eye, w * (num + 0.5 * eye))
    H = H1 + H2 - g * np.kron(x, x)
    psi = np.zeros(dim * dim)
    psi[n1 * dim] = 1.0
    ts = np.linspace(0, 60, 7)
    E1, E2 = vacuum_energy_curves(ts, m, w, g, n1, 0)
    for t, e1, e2 in zip(ts, E1, E2):
        phi = expm(-1j * H * t) @ psi
        assert e1 == pytest.approx((phi.conj() @ H1 @ phi).real / w, abs=1e-8)
        assert e2 == pytest.approx((phi.conj() @ H2 @ phi).real / w, abs=1e-8)


def test_vacuum_energy_exchange_period():
    m, w, g = 1.0, 1.0, 0.01
    T = transfer_time(m, w, g)
    ts = np.linspace(0, 1.2 * T, 4001)
    E1, E2 = vacuum_energy_curves(ts, m, w, g, 5, 0)
    assert np.argmin(E1 - E2) == pytest.approx(np.argmin(np.abs(ts - T)), abs=40)
    np.testing.assert_allclose(E1 + E2, 6.0, rtol=0.02)


def test_first_zero_crossing_linear_and_errors():
    t = np.linspace(0, 1, 21)
    y = 0.5 - t
    t0, s0 = first_zero_crossing(t, y, np.full_like(t, 0.01))
    assert t0 == pytest.approx(0.5, abs=1e-12)
    assert s0 > 0
    assert math.isnan(first_zero_crossing(t, y)[1])
    assert math.isnan(first_zero_crossing(t, 1 + t)[0])


def test_fit_thermalization():
    t = np.linspace(0, 1, 50)
    S = 1.0 + 0.5 * t
    tau = fit_thermalization(t, S, np.full_like(t, 1e-3), equilibrium=3.0)
    assert tau == pytest.approx(4.0, rel=1e-9)
    assert fit_thermalization(t, np.ones_like(t), np.full_like(t, 1e-3), 3.0) == NEVER


def test_compensation_identities():
    t = np.linspace(0, 2, 5)
    tr = TransferTrace(t=t, E1=t, E2=t, E1_err=t, E2_err=t, dE=np.ones(5), dE_err=np.full(5, 0.1))
    same = compensate_thermalization(tr, math.inf)
    np.testing.assert_array_equal(same.dE_scaled, tr.dE)
    comp = compensate_thermalization(tr, 0.5)
    np.testing.assert_allclose(comp.dE_scaled, np.exp(t / 0.5))
    np.testing.assert_allclose(comp.dE_scaled_err, 0.1 * np.exp(t / 0.5))
    with pytest.raises(InvalidParameter):
        compensate_thermalization(tr, 0.0)


def test_vacuum_run_is_exact_and_matches_beat():
    n, D = 6, 400.0
    tr = coupled_transfer(n, D, None, 50, 3, n_out=400, t_max=0.75 * vacuum_transfer_time(n, D))
    # the control variate makes the vacuum estimate exact
    np.testing.assert_array_equal(tr.dE_err, 0.0)
    assert tr.transfer_time == pytest.approx(tr.vacuum_time, rel=0.02)
    assert tr.regime_valid


def test_plasma_run_smoke():
    params = PlasmaParams(0.5e17, gamma=0.1)
    tr = coupled_transfer(6, 400.0, params, 4, 1, n_out=10, t_max=50.0, n_particles=16,
                          prerun_periods=1, lifetime=1e9)
    assert tr.trajectories == 4
    assert np.all(np.isfinite(tr.dE))
