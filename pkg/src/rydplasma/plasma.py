"""Classical molecular dynamics of a trapped, neutral electron-hole plasma.

Everything inside this module works in the scaled units of
:class:`~rydplasma.units.MaterialContext` (length a_B, energy Ry, time
hbar/Ry, charge e). Conversion to SI happens in :func:`init_plasma` and in the
snapshot writer.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .integrator import CashKarp, IntegrationFailure, IntegratorConfig
from .units import DEFAULT_CONTEXT, KB, InvalidParameter, MaterialContext, PlasmaParams

ELECTRON, HOLE = 0, 1


@dataclass
class PlasmaState:
    """Particle arrays plus trap and soft-core parameters, in scaled units."""

    positions: np.ndarray
    velocities: np.ndarray
    charges: np.ndarray
    masses: np.ndarray
    species: np.ndarray
    soft_core: float
    trap_radius: float
    trap_kT: float
    trap_exponent: int = 6
    time: float = 0.0
    sphere_radius: float = 0.0
    ctx: MaterialContext = field(default=DEFAULT_CONTEXT, repr=False)

    def __post_init__(self):
        if not self.sphere_radius:
            self.sphere_radius = self.trap_radius

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "PlasmaState":
        return replace(self, positions=self.positions.copy(), velocities=self.velocities.copy())

    def total_momentum(self) -> np.ndarray:
        return (self.masses[:, None] * self.velocities).sum(axis=0)

    def energy(self) -> float:
        """Kinetic + soft-core pair + trap energy."""
        ke, pe = kernels.kinetic_and_potential(self.positions, self.velocities, self.charges,
                                               self.masses, self.soft_core**2,
                                               self.ctx.coulomb_k_scaled)
        r = np.linalg.norm(self.positions, axis=1)
        z = self.trap_exponent
        trap = self.trap_kT * np.sum(r**z) / (z * self.trap_radius**z)
        return ke + pe + trap


def trap_volume_factor(zeta: float) -> float:
    """Equilibrium volume of an ideal gas in the trap, in units of (4 pi/3) R_trap^3.

    With V = kT r^zeta/(zeta R^zeta) the Boltzmann profile exp(-V/kT) fills
    zeta^(3/zeta) Gamma(1 + 3/zeta) times the sphere of radius R.
    """
    return zeta ** (3.0 / zeta) * math.gamma(1.0 + 3.0 / zeta)


def init_plasma(n_particles: int, params: PlasmaParams, seed, *, neutral: bool = True,
                species_counts: Optional[tuple[int, int]] = None,
                soft_core_fraction: float = 0.02, trap_exponent: int = 6,
                density_matched_trap: bool = True) -> PlasmaState:
    """Uniform positions in the sphere (4 pi/3) R^3 = N/rho, Maxwell-Boltzmann velocities.

    ``species_counts`` = (electrons, holes) overrides the equal split, e.g.
    (N, 0) for an electrons-only run. ``seed`` is anything accepted by
    :func:`numpy.random.default_rng`.

    With ``density_matched_trap`` the trap length scale is shrunk by
    ``trap_volume_factor(zeta)**(1/3)`` so that the relaxed central density
    equals ``params.density``; otherwise the trap uses R itself and the plasma
    expands to roughly half the nominal density.
    """
    ctx = params.ctx
    n_particles = int(n_particles)
    if species_counts is None:
        if n_particles < 2 or (neutral and n_particles % 2):
            raise InvalidParameter(f"a neutral plasma needs an even N >= 2, got {n_particles}")
        n_e = n_h = n_particles // 2
        if not neutral:
            n_h = n_particles - n_e
    else:
        n_e, n_h = map(int, species_counts)
        if n_e < 0 or n_h < 0 or n_e + n_h != n_particles:
            raise InvalidParameter("species_counts must be non-negative and sum to N")
    rng = np.random.default_rng(seed)
    radius_si = (3.0 * n_particles / (4.0 * math.pi * params.density)) ** (1.0 / 3.0)
    radius = ctx.to_scaled(radius_si, "length")

    # uniform in the ball: isotropic direction, radius ~ R u^(1/3)
    direction = rng.normal(size=(n_particles, 3))
    direction /= np.linalg.norm(direction, axis=1)[:, None]
    r = radius * rng.random(n_particles) ** (1.0 / 3.0)
    positions = direction * r[:, None]

    species = np.concatenate([np.full(n_e, ELECTRON), np.full(n_h, HOLE)]).astype(np.int64)
    charges = np.where(species == ELECTRON, -1.0, 1.0)
    masses = np.where(species == ELECTRON, ctx.mass_scaled(ctx.m_e_eff), ctx.mass_scaled(ctx.m_h_eff))
    kT = np.where(species == ELECTRON, params.temperature_e, params.temperature_h) * KB
    kT = ctx.to_scaled(kT, "energy")
    velocities = rng.normal(size=(n_particles, 3)) * np.sqrt(kT / masses)[:, None]
    return PlasmaState(
        positions=positions, velocities=velocities, charges=charges, masses=masses,
        species=species, soft_core=soft_core_fraction * ctx.to_scaled(params.a_ws, "length"),
        trap_radius=radius / trap_volume_factor(trap_exponent) ** (1.0 / 3.0)
        if density_matched_trap else radius,
        trap_kT=ctx.to_scaled(KB * params.temperature, "energy"),
        trap_exponent=int(trap_exponent), sphere_radius=radius, ctx=ctx,
    )


def pair_force(r_vec, q1: float, q2: float, soft_core: float, coulomb_k: float = 2.0) -> np.ndarray:
    """Soft-core Coulomb force on particle 1 from particle 2; ``r_vec`` = r1 - r2."""
    if soft_core <= 0:
        raise InvalidParameter("soft core must be positive")
    r_vec = np.asarray(r_vec, dtype=float)
    r2 = float(r_vec @ r_vec) + soft_core**2
    return coulomb_k * q1 * q2 * r_vec / r2**1.5


def trap_force(r, state: PlasmaState):
    """Signed radial trap force -dV/dr (negative = inward) at radius ``r``."""
    r = np.asarray(r, dtype=float)
    return -state.trap_kT * r ** (state.trap_exponent - 1) / state.trap_radius**state.trap_exponent


def trap_potential(r, state: PlasmaState):
    z = state.trap_exponent
    return state.trap_kT * np.asarray(r, dtype=float) ** z / (z * state.trap_radius**z)


# ---------------------------------------------------------------------------
# external sources
# ---------------------------------------------------------------------------
class ExternalSource:
    """Charges and point dipoles with prescribed motion.

    Prescribed sources push on the plasma but feel nothing back.
    """

    prescribed = True

    def charges_at(self, t: float):
        """(positions (M, 3), charges (M,)) at scaled time ``t``, or None."""
        return None

    def dipoles_at(self, t: float):
        """(centers (K, 3), moments (K, 3)) at scaled time ``t``, or None."""
        return None


class NoSource(ExternalSource):
    pass


class PointCharges(ExternalSource):
    def __init__(self, positions, charges):
        self.positions = np.atleast_2d(np.asarray(positions, dtype=float))
        self.charges = np.atleast_1d(np.asarray(charges, dtype=float))

    def charges_at(self, t):
        return self.positions, self.charges


class OscillatingDipoles(ExternalSource):
    """Point dipoles p_k(t) = amplitude_k * cos(omega t + phase) at fixed centers."""

    def __init__(self, centers, amplitudes, omega: float, phase: float = 0.0):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.amplitudes = np.atleast_2d(np.asarray(amplitudes, dtype=float))
        self.omega = float(omega)
        self.phase = float(phase)

    def dipoles_at(self, t):
        return self.centers, self.amplitudes * math.cos(self.omega * t + self.phase)


class RingFragments(ExternalSource):
    """Charges split into M equal fragments on circles in the xy-plane, rotating at ``omega``.

    Each entry of ``rings`` is (radius, total charge, angular offset); the
    fragments of one ring sit at uniform angular spacing 2 pi/M.
    """

    def __init__(self, rings: Sequence[tuple[float, float, float]], m_fragments: int, omega: float):
        if m_fragments < 1:
            raise InvalidParameter("need at least one fragment")
        self.rings = [tuple(map(float, r)) for r in rings]
        self.m = int(m_fragments)
        self.omega = float(omega)
        self._q = np.concatenate([np.full(self.m, q / self.m) for _, q, _ in self.rings])

    def charges_at(self, t):
        k = np.arange(self.m)
        out = []
        for radius, _, offset in self.rings:
            angle = self.omega * t + offset + 2.0 * math.pi * k / self.m
            out.append(np.column_stack([radius * np.cos(angle), radius * np.sin(angle),
                                        np.zeros(self.m)]))
        return np.vstack(out), self._q


class CompositeSource(ExternalSource):
    def __init__(self, *sources: ExternalSource):
        self.sources = [s for s in sources if s is not None]

    def charges_at(self, t):
        parts = [s.charges_at(t) for s in self.sources]
        parts = [p for p in parts if p is not None]
        if not parts:
            return None
        return np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def dipoles_at(self, t):
        parts = [s.dipoles_at(t) for s in self.sources]
        parts = [p for p in parts if p is not None]
        if not parts:
            return None
        return np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts])


# ---------------------------------------------------------------------------
# dynamical system
# ---------------------------------------------------------------------------
class Attachment:
    """Extra dynamical degrees of freedom integrated together with the plasma.

    Subclasses define ``size``, ``initial()``, ``scale()`` and ``rhs``; ``rhs``
    may add reaction forces onto ``plasma_forces`` in place.
    """

    size = 0

    def initial(self) -> np.ndarray:
        return np.zeros(self.size)

    def scale(self) -> np.ndarray:
        return np.ones(self.size)

    def rhs(self, t, y, pos, charges, plasma_forces, a2, kc) -> np.ndarray:
        raise NotImplementedError


class PlasmaSystem:
    """Right-hand side of the plasma equations of motion plus attachments."""

    def __init__(self, state: PlasmaState, source: Optional[ExternalSource] = None,
                 attachments: Sequence[Attachment] = (), trap: bool = True):
        self.state = state
        self.source = source or NoSource()
        self.attachments = list(attachments)
        self.trap = trap
        self.n = state.n
        self.kc = state.ctx.coulomb_k_scaled
        self.a2 = state.soft_core**2
        self._inv_m = (1.0 / state.masses)[:, None]
        self._forces = np.zeros((self.n, 3))
        self.slices = []
        offset = 6 * self.n
        for att in self.attachments:
            self.slices.append(slice(offset, offset + att.size))
            offset += att.size
        self.size = offset

    def pack(self, state: Optional[PlasmaState] = None, extras=None) -> np.ndarray:
        state = state or self.state
        parts = [state.positions.ravel(), state.velocities.ravel()]
        if extras is None:
            extras = [att.initial() for att in self.attachments]
        parts.extend(np.asarray(e, dtype=float) for e in extras)
        return np.concatenate(parts)

    def unpack(self, y):
        n3 = 3 * self.n
        return y[:n3].reshape(self.n, 3), y[n3:2 * n3].reshape(self.n, 3)

    def scale(self) -> np.ndarray:
        st = self.state
        v_scale = math.sqrt(st.trap_kT / float(np.min(st.masses))) if self.n else 1.0
        a_ws = st.sphere_radius / self.n ** (1.0 / 3.0) if self.n else 1.0
        parts = [np.full(3 * self.n, a_ws), np.full(3 * self.n, v_scale)]
        parts.extend(att.scale() for att in self.attachments)
        return np.concatenate(parts)

    def plasma_forces(self, t, pos, y=None):
        f = self._forces
        st = self.state
        if self.n:
            kernels.pair_forces(pos, st.charges, self.a2, self.kc, f)
            if self.trap:
                kernels.add_trap_forces(pos, st.trap_kT, st.trap_radius, float(st.trap_exponent), f)
            ch = self.source.charges_at(t)
            if ch is not None:
                kernels.add_charge_forces(pos, st.charges, ch[0], ch[1], self.a2, self.kc, f)
            dp = self.source.dipoles_at(t)
            if dp is not None:
                kernels.add_dipole_forces(pos, st.charges, dp[0], dp[1], self.a2, self.kc, f)
        return f

    def __call__(self, t, y):
        pos, vel = self.unpack(y)
        dy = np.empty_like(y)
        f = self.plasma_forces(t, pos)
        for att, sl in zip(self.attachments, self.slices):
            dy[sl] = att.rhs(t, y[sl], pos, self.state.charges, f, self.a2, self.kc)
        n3 = 3 * self.n
        dy[:n3] = vel.ravel()
        dy[n3:2 * n3] = (f * self._inv_m).ravel()
        return dy


class PlasmaSimulation:
    """Owns a plasma state (+ attachments) and advances it with the adaptive stepper."""

    def __init__(self, state: PlasmaState, cfg: Optional[IntegratorConfig] = None,
                 source: Optional[ExternalSource] = None, attachments: Sequence[Attachment] = (),
                 trap: bool = True):
        self.system = PlasmaSystem(state, source, attachments, trap)
        self.cfg = cfg or IntegratorConfig()
        self.stepper = CashKarp(self.system, self.cfg, self.system.scale())
        self.y = self.system.pack()
        self.t = state.time
        self.h: Optional[float] = None

    @property
    def state(self) -> PlasmaState:
        pos, vel = self.system.unpack(self.y)
        st = self.system.state
        return replace(st, positions=pos.copy(), velocities=vel.copy(), time=self.t)

    def extras(self, index: int = 0) -> np.ndarray:
        return self.y[self.system.slices[index]]

    def step(self):
        """One accepted adaptive step; returns the suggested next step."""
        if self.h is None:
            self.h = self.stepper.initial_step(self.t, self.y, self.t + 1.0)
        self.t, self.y, self.h = self.stepper.step(self.t, self.y, self.h)
        return self.h

    def advance_to(self, t_end: float):
        if t_end <= self.t:
            return
        self.y, self.h = self.stepper.advance(self.t, self.y, t_end, self.h)
        self.t = t_end

    def run(self, duration: float, sample_every: Optional[float] = None,
            sampler: Optional[Callable[["PlasmaSimulation"], None]] = None):
        """Advance by ``duration``, calling ``sampler(self)`` every ``sample_every``."""
        t_end = self.t + duration
        if sampler is None or sample_every is None:
            self.advance_to(t_end)
            return
        n_samples = int(math.floor(duration / sample_every + 1e-9))
        t0 = self.t
        for k in range(1, n_samples + 1):
            self.advance_to(t0 + k * sample_every)
            sampler(self)
        self.advance_to(t_end)


def rkqs_step(sim: PlasmaSimulation):
    """Take one quality-controlled step; returns (state, suggested next step)."""
    h = sim.step()
    return sim.state, h


# ---------------------------------------------------------------------------
# equilibration and probes
# ---------------------------------------------------------------------------
@dataclass
class EquilibriumDiagnostics:
    temperature_full: float
    temperature_half: float
    density_full: float
    density_half: float
    target_temperature: float
    target_density: float
    momentum: np.ndarray
    energy_drift: float


def local_diagnostics(state: PlasmaState):
    """Kinetic temperature (K) and density (m^-3) inside radii R and R/2."""
    ctx = state.ctx
    r = np.linalg.norm(state.positions, axis=1)
    ke = 0.5 * state.masses * np.sum(state.velocities**2, axis=1)
    out = []
    for radius in (state.sphere_radius, 0.5 * state.sphere_radius):
        inside = r < radius
        count = int(inside.sum())
        kT = (2.0 / 3.0) * ke[inside].mean() if count else float("nan")
        volume = 4.0 / 3.0 * math.pi * ctx.to_si(radius, "length") ** 3
        out.append((ctx.to_si(kT, "energy") / KB, count / volume))
    return out


def rescale_temperatures(sim: "PlasmaSimulation", params: PlasmaParams):
    """Rescale each species' velocities so its kinetic temperature hits its target."""
    st = sim.system.state
    _, vel = sim.system.unpack(sim.y)
    ctx = st.ctx
    for sp, temp in ((ELECTRON, params.temperature_e), (HOLE, params.temperature_h)):
        sel = st.species == sp
        if not sel.any():
            continue
        ke = 0.5 * np.sum(st.masses[sel, None] * vel[sel] ** 2) / sel.sum()
        target = 1.5 * ctx.to_scaled(KB * temp, "energy")
        if ke > 0:
            vel[sel] *= math.sqrt(target / ke)


def equilibrate(state: PlasmaState, params: PlasmaParams, periods: float = 50.0,
                cfg: Optional[IntegratorConfig] = None, source: Optional[ExternalSource] = None,
                thermalize_fraction: float = 0.5, rescale_every: float = 0.1):
    """Prerun of ``periods`` plasma periods; returns (state, diagnostics).

    During the first ``thermalize_fraction`` of the prerun the species
    temperatures are reset every ``rescale_every`` plasma periods (relaxation
    into the trap profile otherwise cools the plasma); the remainder is free
    Hamiltonian evolution.
    """
    ctx = state.ctx
    tau_p = ctx.to_scaled(params.tau_p, "time")
    sim = PlasmaSimulation(state.copy(), cfg, source=source)
    hot = thermalize_fraction * periods * tau_p
    if hot > 0:
        sim.run(hot, sample_every=rescale_every * tau_p,
                sampler=lambda s: rescale_temperatures(s, params))
    e0 = sim.state.energy()
    sim.run(periods * tau_p - hot)
    final = sim.state
    (t_full, n_full), (t_half, n_half) = local_diagnostics(final)
    diag = EquilibriumDiagnostics(
        temperature_full=t_full, temperature_half=t_half, density_full=n_full,
        density_half=n_half, target_temperature=params.temperature,
        target_density=params.density, momentum=final.total_momentum(),
        energy_drift=(final.energy() - e0) / abs(e0) if source is None else float("nan"),
    )
    return final, diag


def field_at(points, state: PlasmaState, source: Optional[ExternalSource] = None,
             t: Optional[float] = None) -> np.ndarray:
    """Soft-core electric field (scaled units, per unit charge) at ``points``."""
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    t = state.time if t is None else t
    kc = state.ctx.coulomb_k_scaled
    a2 = state.soft_core**2
    out = np.zeros_like(points)
    if state.n:
        kernels.fields_at(points, state.positions, state.charges, a2, kc, out)
    if source is not None:
        extra = np.zeros_like(points)
        ch = source.charges_at(t)
        if ch is not None:
            kernels.fields_at(points, np.ascontiguousarray(ch[0]), ch[1], a2, kc, extra)
            out += extra
        dp = source.dipoles_at(t)
        if dp is not None:
            out += dipole_field(points, dp[0], dp[1], state.soft_core, kc)
    return out


def dipole_field(points, centers, moments, soft_core: float, kc: float = 2.0) -> np.ndarray:
    """Field of soft-cored ideal point dipoles, -grad of kc p.r/(r^2+a^2)^(3/2)."""
    points = np.atleast_2d(points)
    out = np.zeros_like(points, dtype=float)
    for c, p in zip(np.atleast_2d(centers), np.atleast_2d(moments)):
        d = points - c
        r2 = np.sum(d * d, axis=1) + soft_core**2
        pr = d @ p
        out += kc * (3.0 * pr[:, None] * d / r2[:, None] ** 2.5 - p / r2[:, None] ** 1.5)
    return out


def write_snapshot(path, state: PlasmaState, append: bool = False):
    """Append one CSV snapshot (SI units): t, id, species, x, y, z, vx, vy, vz."""
    ctx = state.ctx
    pos = ctx.to_si(state.positions, "length")
    vel = ctx.to_si(state.velocities, "velocity")
    t = ctx.to_si(state.time, "time")
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if not append:
            w.writerow(["t", "id", "species", "x", "y", "z", "vx", "vy", "vz"])
        for i in range(state.n):
            w.writerow([f"{t:.9e}", i, "e" if state.species[i] == ELECTRON else "h",
                        *(f"{v:.9e}" for v in pos[i]), *(f"{v:.9e}" for v in vel[i])])


__all__ = [
    "PlasmaState", "init_plasma", "pair_force", "trap_force", "trap_potential", "ExternalSource",
    "NoSource", "PointCharges", "OscillatingDipoles", "RingFragments", "CompositeSource",
    "Attachment", "PlasmaSystem", "PlasmaSimulation", "rkqs_step", "equilibrate",
    "local_diagnostics", "field_at", "dipole_field", "write_snapshot", "IntegrationFailure",
]
