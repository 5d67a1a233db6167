import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rydplasma.integrator import IntegratorConfig
from rydplasma.plasma import (OscillatingDipoles, PlasmaSimulation, PointCharges, PlasmaSystem,
                              dipole_field, field_at, init_plasma, pair_force, trap_force,
                              trap_potential, trap_volume_factor)
from rydplasma.units import DEFAULT_CONTEXT as ctx, InvalidParameter, PlasmaParams

PARAMS = PlasmaParams(1e19, gamma=0.1)


def direct_forces(pos, q, a2, kc=2.0):
    d = pos[:, None, :] - pos[None, :, :]
    r2 = np.sum(d * d, axis=2) + a2
    f = kc * (q[:, None] * q[None, :])[:, :, None] * d / r2[:, :, None] ** 1.5
    return f.sum(axis=1)


def test_pair_force_inverse_square():
    f = pair_force([3.0, 0, 0], 1.0, -1.0, 1e-8)
    np.testing.assert_allclose(f, [-2.0 / 9.0, 0, 0], rtol=1e-12)


def test_pair_force_requires_soft_core():
    with pytest.raises(InvalidParameter):
        pair_force([1.0, 0, 0], 1, 1, 0.0)


@given(st.integers(0, 10_000))
def test_newton_third_law(seed):
    state = init_plasma(16, PARAMS, seed)
    sys_ = PlasmaSystem(state, trap=False)
    f = sys_.plasma_forces(0.0, state.positions).copy()
    np.testing.assert_allclose(f.sum(axis=0), 0.0, atol=1e-12 * np.abs(f).max())


def test_kernel_forces_match_direct_sum():
    state = init_plasma(32, PARAMS, 4)
    f = PlasmaSystem(state, trap=False).plasma_forces(0.0, state.positions)
    np.testing.assert_allclose(f, direct_forces(state.positions, state.charges,
                                                state.soft_core**2), rtol=1e-10)


def test_trap_force_is_minus_gradient():
    state = init_plasma(8, PARAMS, 1)
    r = np.linspace(0.2, 1.5, 7) * state.trap_radius
    h = 1e-6 * state.trap_radius
    num = -(trap_potential(r + h, state) - trap_potential(r - h, state)) / (2 * h)
    np.testing.assert_allclose(trap_force(r, state), num, rtol=1e-7)


def test_trap_volume_factor_by_quadrature():
    from scipy.integrate import quad
    zeta = 6
    vol = quad(lambda r: 4 * math.pi * r**2 * math.exp(-r**zeta / zeta), 0, 10)[0]
    assert trap_volume_factor(zeta) == pytest.approx(vol / (4 * math.pi / 3), rel=1e-8)


def test_init_plasma_density_and_temperature():
    n = 4000
    state = init_plasma(n, PARAMS, 11)
    assert state.charges.sum() == 0
    rho = n / (4 * math.pi / 3 * ctx.to_si(state.sphere_radius, "length")**3)
    assert rho == pytest.approx(1e19, rel=1e-10)
    assert np.linalg.norm(state.positions, axis=1).max() <= state.sphere_radius
    ke = 0.5 * state.masses * np.sum(state.velocities**2, axis=1)
    assert ke.mean() == pytest.approx(1.5 * state.trap_kT, rel=0.05)


def test_init_plasma_rejects_odd_neutral():
    with pytest.raises(InvalidParameter):
        init_plasma(7, PARAMS, 0)
    st_ = init_plasma(5, PARAMS, 0, species_counts=(5, 0))
    assert st_.charges.sum() == -5


def test_momentum_and_energy_conserved_without_trap():
    state = init_plasma(16, PARAMS, 3)
    sim = PlasmaSimulation(state, IntegratorConfig(rtol=1e-9, atol=1e-9), trap=False)
    p0, e0 = state.total_momentum(), state.energy() - 0.0
    trap0 = np.sum(trap_potential(np.linalg.norm(state.positions, axis=1), state))
    tau = ctx.to_scaled(PARAMS.tau_p, "time")
    sim.advance_to(0.5 * tau)
    end = sim.state
    trap1 = np.sum(trap_potential(np.linalg.norm(end.positions, axis=1), end))
    scale = np.abs(state.masses[:, None] * state.velocities).sum()
    np.testing.assert_allclose(end.total_momentum(), p0, atol=1e-8 * scale)
    assert (end.energy() - trap1) == pytest.approx(e0 - trap0, rel=1e-6)


def test_energy_conserved_with_trap():
    state = init_plasma(16, PARAMS, 5)
    sim = PlasmaSimulation(state, IntegratorConfig(rtol=1e-9, atol=1e-9))
    e0 = state.energy()
    sim.advance_to(ctx.to_scaled(PARAMS.tau_p, "time"))
    assert sim.state.energy() == pytest.approx(e0, rel=1e-6)


def test_field_at_matches_direct_sum():
    state = init_plasma(12, PARAMS, 2)
    pts = np.array([[0.1, 0.2, 0.3], [5.0, -4.0, 1.0]]) * state.sphere_radius
    d = pts[:, None, :] - state.positions[None, :, :]
    r2 = np.sum(d * d, axis=2) + state.soft_core**2
    ref = (2.0 * state.charges[None, :, None] * d / r2[:, :, None] ** 1.5).sum(axis=1)
    np.testing.assert_allclose(field_at(pts, state), ref, rtol=1e-10)


def test_point_charge_source_adds_its_field():
    state = init_plasma(2, PARAMS, 2)
    src = PointCharges([[0.0, 0.0, 0.0]], [1.0])
    p = np.array([[10.0, 0.0, 0.0]])
    extra = field_at(p, state, src) - field_at(p, state)
    np.testing.assert_allclose(extra[0, 0], 2.0 / (100.0 + state.soft_core**2) ** 1.5 * 10.0,
                               rtol=1e-10)


def test_dipole_field_is_gradient_of_potential():
    a = 0.3
    c = np.array([0.2, -0.1, 0.4])
    p = np.array([0.5, 1.0, -2.0])
    x0 = np.array([1.3, 0.7, -0.9])

    def phi(x):
        d = x - c
        return 2.0 * (p @ d) / (d @ d + a * a) ** 1.5

    h = 1e-6
    grad = np.array([(phi(x0 + h * e) - phi(x0 - h * e)) / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(dipole_field(x0, c, p, a)[0], -grad, rtol=1e-6)


def test_oscillating_dipole_is_cosine():
    src = OscillatingDipoles([[0, 0, 0]], [[0, 0, 2.0]], omega=3.0)
    _, m = src.dipoles_at(0.5)
    np.testing.assert_allclose(m[0, 2], 2.0 * math.cos(1.5))
