import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate
from scipy.linalg import expm

from rydplasma.fitting import PowerLawFit
from rydplasma.plasma import dipole_field, init_plasma
from rydplasma.twa import (DriveRecord, OscillatorBank, OscillatorSpec, critical_density,
                           critical_density_at, dipole_coupling_force, displaced_population,
                           fit_lifetime, ho_wigner, reconstruct, record_drive, sample_signed,
                           twa_evolve, weyl_symbol, window_exact, window_trace,
                           wigner_abs_norm)
from rydplasma.units import DEFAULT_CONTEXT as ctx, InvalidParameter, PlasmaParams


def fock_operators(dim):
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    return a, (a + a.T) / math.sqrt(2.0)


@pytest.mark.parametrize("n, m, omega", [(0, 1.0, 1.0), (1, 2.0, 0.5), (4, 0.3, 3.0)])
def test_wigner_normalized(n, m, omega):
    ell = math.sqrt(1 / (m * omega))
    lim = 12.0
    val = integrate.dblquad(lambda p, x: ho_wigner(n, x, p, m, omega),
                            -lim * ell, lim * ell, -lim / ell, lim / ell, epsabs=1e-10)[0]
    assert val == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize("n, m", [(0, 0), (2, 2), (5, 5), (3, 4), (0, 6), (7, 2)])
def test_weyl_symbol_orthonormal(n, m):
    # rho_mm = int W_n W~_m dX dP, radial in s = X^2 + P^2 (dX dP = pi ds)
    f = lambda s: math.pi * (-1) ** n * math.exp(-s) * float(
        np.polynomial.laguerre.lagval(2 * s, [0] * n + [1])) / math.pi * float(weyl_symbol(m, s))
    val = integrate.quad(f, 0, 60, limit=400)[0]
    assert val == pytest.approx(1.0 if n == m else 0.0, abs=1e-9)


def test_abs_norm_by_grid_quadrature():
    n = 1
    z = wigner_abs_norm(n)
    xs = np.linspace(-8, 8, 1601)
    X, P = np.meshgrid(xs, xs)
    grid = np.abs(ho_wigner(n, X, P)).sum() * (xs[1] - xs[0]) ** 2
    assert z > 1.0
    assert z == pytest.approx(grid, rel=1e-4)
    assert wigner_abs_norm(0) == pytest.approx(1.0, abs=1e-12)


def test_ground_state_samples_positive_with_vacuum_energy():
    ens = sample_signed(0, 20000, 3, mass=2.0, omega=0.7)
    assert np.all(ens.w == 1.0)
    e = ens.energies()
    assert abs(e.mean() - 0.35) < 3 * e.std() / math.sqrt(e.size)


def test_sampling_deterministic_per_seed():
    a = sample_signed(5, 500, 42)
    b = sample_signed(5, 500, 42)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.w, b.w)
    assert not np.array_equal(a.X, sample_signed(5, 500, 43).X)


@pytest.mark.parametrize("n_osc", [0, 5, 48])
def test_reconstruction_at_t0(n_osc):
    ens = sample_signed(n_osc, 200_000, n_osc + 1)
    levels = np.arange(max(0, n_osc - 3), n_osc + 4)
    pop, err = reconstruct(ens.X, ens.P, ens.w, ens.Z, levels)
    target = (levels == n_osc).astype(float)
    assert np.all(np.abs(pop - target) <= 3 * err + 1e-12)
    assert pop.sum() <= 1 + 3 * np.sqrt((err**2).sum())


def test_sampler_rejects_tiny_efficiency():
    with pytest.raises(InvalidParameter):
        sample_signed(0, 10, 0, box=200.0)


@pytest.mark.parametrize("n", [0, 3, 10])
def test_displaced_population_matches_fock_oracle(n):
    dim = 120
    a, _ = fock_operators(dim)
    alpha = 0.8 - 0.5j
    D = expm(alpha * a.T - np.conj(alpha) * a)
    assert displaced_population(n, abs(alpha) ** 2) == pytest.approx(abs(D[n, n]) ** 2,
                                                                     abs=1e-10)


def test_twa_reconstructs_displaced_state():
    # quadratic Hamiltonians are exact in TWA: shift the samples by sqrt(2) alpha
    n, alpha = 4, 0.6
    ens = sample_signed(n, 200_000, 9)
    pop, err = reconstruct(ens.X + math.sqrt(2) * alpha, ens.P, ens.w, ens.Z, [n])
    assert abs(pop[0] - displaced_population(n, alpha**2)) <= 3 * err[0]


def test_dipole_force_single_charge_on_axis():
    params = PlasmaParams(1e19, gamma=0.1)
    state = init_plasma(2, params, 0, species_counts=(0, 2))
    d = 50.0
    state.positions[:] = [[0, 0, d], [0, 0, 1e9]]
    f, reaction = dipole_coupling_force(0.3, state)
    a2 = state.soft_core**2
    # field of the near charge at the centre points along -z
    assert f == pytest.approx(-2.0 * d / (d * d + a2) ** 1.5, rel=1e-6)
    expect = state.charges[0] * dipole_field(state.positions[:1], [0, 0, 0], [0, 0, 0.3],
                                             state.soft_core)[0]
    np.testing.assert_allclose(reaction[0], expect, rtol=1e-10)


def test_no_plasma_no_force():
    from rydplasma.kepler import empty_plasma
    f, r = dipole_coupling_force(1.0, empty_plasma())
    assert f == 0.0 and r.shape == (0, 3)


def test_free_oscillator_is_stationary():
    ens = sample_signed(6, 5000, 1, mass=0.9, omega=0.02)
    tr = twa_evolve(ens, None, t_max=3 * 2 * math.pi / 0.02, stride=40.0)
    for j in range(len(tr.levels)):
        np.testing.assert_allclose(tr.pop[:, j], tr.pop[0, j], atol=1e-9)
    p, e = tr.level()
    assert np.all(np.abs(p - 1.0) <= 3 * e)
    total_err = np.sqrt((tr.stderr**2).sum(axis=1))
    assert np.all(tr.pop.sum(axis=1) <= 1 + 3 * total_err)


def test_oscillator_bank_coupled_normal_modes():
    from rydplasma.kepler import empty_plasma
    from rydplasma.plasma import PlasmaSimulation
    from rydplasma.integrator import IntegratorConfig
    m, w, g = 1.3, 0.8, 0.2
    G = np.array([[0, g], [g, 0]])
    bank = OscillatorBank([m, m], w, x0=[1.0, 0.0], coupling=G)
    sim = PlasmaSimulation(empty_plasma(), IntegratorConfig(rtol=1e-11, atol=1e-11),
                           attachments=[bank])
    t = 37.0
    sim.advance_to(t)
    M = np.zeros((4, 4))
    M[:2, 2:] = np.eye(2) / m
    M[2:, :2] = -m * w**2 * np.eye(2) + G
    ref = expm(M * t) @ np.array([1.0, 0, 0, 0])
    np.testing.assert_allclose(sim.extras(0), ref, atol=1e-8)


def _constant_force_record(n_osc, F, omega=1.0, mass=1.0, steps=2000, dt=0.01):
    spec = OscillatorSpec(n=1, n_osc=n_osc, mass=mass, omega=omega)
    t = np.arange(steps + 1) * dt
    d = F / (mass * omega**2)
    x = d * (1 - np.cos(omega * t))
    p = mass * d * omega * np.sin(omega * t)
    ell = spec.length
    return DriveRecord(t=t, X=(x / ell)[:, None], P=(p * ell)[:, None], specs=(spec,))


def test_windowed_populations_against_fock_evolution():
    n, F = 3, 0.4
    rec = _constant_force_record(n, F)
    t, pop = window_exact([rec], 0, 600, 100, stride=50)
    tr = window_trace([rec], 0, 600, 100, 20000, seed=5, levels=[n], stride=50)
    dim = 80
    a, x = fock_operators(dim)
    H = np.diag(np.arange(dim) + 0.5) - F * x
    psi0 = np.zeros(dim)
    psi0[n] = 1.0
    ref = np.array([abs((expm(-1j * H * tk) @ psi0)[n]) ** 2 for tk in t])
    np.testing.assert_allclose(pop, ref, atol=1e-8)
    # single record: no spread error, compare with a sampling allowance
    assert np.max(np.abs(tr.pop[:, 0] - ref)) < 0.02


def test_record_drive_starts_at_rest_and_is_reproducible():
    params = PlasmaParams(1e19, temperature=40.0)
    specs = [OscillatorSpec.for_level(4, ctx)]
    tau = ctx.to_scaled(params.tau_p, "time")
    r1 = record_drive(params, specs, 0.2 * tau, 0.02 * tau, 7, n_particles=16, prerun_periods=1)
    r2 = record_drive(params, specs, 0.2 * tau, 0.02 * tau, 7, n_particles=16, prerun_periods=1)
    assert r1.X[0, 0] == 0.0 and r1.P[0, 0] == 0.0
    assert len(r1.t) == 11
    np.testing.assert_array_equal(r1.X, r2.X)


def test_fit_lifetime_exact_exponential():
    t = np.linspace(0, 2, 400)
    fit = fit_lifetime((t, np.exp(-t / 0.7)))
    assert fit.tau == pytest.approx(0.7, rel=1e-6)
    finer = np.linspace(0, 2, 799)
    assert fit_lifetime((finer, np.exp(-finer / 0.7))).tau == pytest.approx(fit.tau, rel=1e-9)


def test_fit_lifetime_ignores_plateau():
    t = np.linspace(0, 5, 1000)
    y = np.maximum(np.exp(-t / 0.5), 0.3)
    assert fit_lifetime((t, y)).tau == pytest.approx(0.5, rel=1e-6)


def test_fit_lifetime_censored_and_underresolved():
    t = np.linspace(0, 1, 50)
    assert fit_lifetime((t, np.ones_like(t))).censored
    with pytest.raises(InvalidParameter):
        fit_lifetime((t[:5], np.exp(-t[:5] / 0.01)))


def test_critical_density_solves_rate_condition():
    n = 6
    w = ctx.to_si(2.0 / n**3, "frequency")
    fit = PowerLawFit(exponent=-1.0, prefactor=1e9, stderr=0.05, prefactor_log_stderr=0.1,
                      window=(1e18, 1e20), residuals=np.zeros(3), n_points=3)
    rho = critical_density(fit, n)
    assert 1e9 / rho == pytest.approx(1 / w, rel=1e-12)
    bad = PowerLawFit(-1.0, 1e9, 0.6, 0.1, (1e18, 1e20), np.zeros(3), 3)
    with pytest.raises(InvalidParameter):
        critical_density(bad, n)


@given(st.floats(1e15, 1e20), st.floats(1, 100))
def test_quadrupling_temperature_halves_critical_density(rho, T):
    assert critical_density_at(rho, T, 4 * T) == pytest.approx(rho / 2, rel=1e-12)
