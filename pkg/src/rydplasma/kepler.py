"""Classical Keplerian electron-hole pair and the classical lifetime Monte Carlo.

Orbits live in the xy-plane with angular momentum along +z and the centre
of mass at the origin. The relative coordinate is r = r_e - r_h; the electron
sits at (mu/m_e) r and the hole at -(mu/m_h) r. Everything is in the scaled
units of :mod:`rydplasma.units`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .integrator import IntegrationFailure, IntegratorConfig
from .plasma import (Attachment, ExternalSource, PlasmaSimulation, PlasmaState, equilibrate,
                     init_plasma)
from . import kernels
from .units import DEFAULT_CONTEXT, InvalidParameter, MaterialContext, PlasmaParams, seed_sequence

XI_CAP = 1.0 - 1e-9
DEFAULT_PRECESSION = 0.2


def solve_kepler(mean_anomaly, xi: float, tol: float = 1e-14, max_iter: int = 50):
    """Eccentric anomaly E with E - xi sin E = M, vectorised Newton iteration."""
    M = np.asarray(mean_anomaly, dtype=float)
    M = np.mod(M + math.pi, 2.0 * math.pi) - math.pi
    # Danby's starter converges for all eccentricities below one
    E = M + np.sign(np.sin(M)) * 0.85 * xi
    for _ in range(max_iter):
        f = E - xi * np.sin(E) - M
        step = f / (1.0 - xi * np.cos(E))
        E = E - step
        if np.all(np.abs(step) < tol):
            break
    return E


@dataclass(frozen=True)
class OrbitPair:
    """Bound electron-hole Kepler orbit (scaled units).

    ``omega`` is the orbital angular frequency. It defaults to the Kepler
    value for ``semi_major`` but can be overridden for prescribed orbits
    that are driven faster than their natural frequency.
    """

    n: int
    xi: float
    semi_major: float
    omega: float
    l: Optional[int] = None
    phase: float = 0.0
    omega_prec: float = 0.0
    apsis_angle: float = 0.0
    mode: str = "prescribed"
    ctx: MaterialContext = field(default=DEFAULT_CONTEXT, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.xi < 1.0:
            raise InvalidParameter(f"eccentricity must lie in [0, 1), got {self.xi}")
        if self.mode not in ("prescribed", "dynamic"):
            raise InvalidParameter(f"unknown orbit mode {self.mode!r}")
        if self.omega_prec < 0:
            raise InvalidParameter("precession rate must be non-negative")

    @property
    def mu(self) -> float:
        return 0.5

    @property
    def electron_axis(self) -> float:
        return self.ctx.mu / self.ctx.m_e_eff * self.semi_major

    @property
    def hole_axis(self) -> float:
        return self.ctx.mu / self.ctx.m_h_eff * self.semi_major

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega

    def apsis(self, t):
        return self.apsis_angle + self.omega_prec * np.asarray(t, dtype=float)

    def relative(self, t):
        """Relative position and velocity r_e - r_h at time(s) ``t``; shapes (..., 3)."""
        t = np.asarray(t, dtype=float)
        a, xi = self.semi_major, self.xi
        E = solve_kepler(self.omega * t + self.phase, xi)
        b = a * math.sqrt(1.0 - xi * xi)
        cosE, sinE = np.cos(E), np.sin(E)
        x, y = a * (cosE - xi), b * sinE
        Edot = self.omega / (1.0 - xi * cosE)
        vx, vy = -a * sinE * Edot, b * cosE * Edot
        w = self.apsis(t)
        c, s = np.cos(w), np.sin(w)
        X, Y = c * x - s * y, s * x + c * y
        VX = c * vx - s * vy - self.omega_prec * Y
        VY = s * vx + c * vy + self.omega_prec * X
        zero = np.zeros_like(X)
        return np.stack([X, Y, zero], axis=-1), np.stack([VX, VY, zero], axis=-1)

    def positions(self, t):
        """(electron, hole) positions at time ``t``."""
        r, _ = self.relative(t)
        return self.ctx.mu / self.ctx.m_e_eff * r, -self.ctx.mu / self.ctx.m_h_eff * r

    def velocities(self, t):
        _, v = self.relative(t)
        return self.ctx.mu / self.ctx.m_e_eff * v, -self.ctx.mu / self.ctx.m_h_eff * v

    def separation_range(self):
        return self.semi_major * (1.0 - self.xi), self.semi_major * (1.0 + self.xi)


def eccentricity(n: int, l: int) -> float:
    """Kepler eccentricity for L = hbar sqrt(l(l+1)), capped just below one.

    In scaled units L^2/(mu k e^2) = l(l+1) and (mu omega^2/(k e^2))^(1/3) = 1/n^2.
    """
    if l < 0 or l >= n:
        raise InvalidParameter(f"need 0 <= l < n, got n={n}, l={l}")
    xi2 = 1.0 - l * (l + 1) / n**2
    return min(math.sqrt(max(xi2, 0.0)), XI_CAP)


def init_kepler(n: int, l: Optional[int] = None, ctx: MaterialContext = DEFAULT_CONTEXT, *,
                xi: Optional[float] = None, phase: float = 0.0, apsis_angle: float = 0.0,
                omega_scale: float = 1.0, mode: str = "prescribed") -> OrbitPair:
    """Orbit with energy E_n and semi-major axis n^2 a_B.

    Give ``l`` to derive the eccentricity or ``xi`` to set it directly.
    ``omega_scale`` multiplies the orbital frequency of a prescribed orbit.
    """
    if int(n) != n or n < 1:
        raise InvalidParameter(f"n must be a positive integer, got {n!r}")
    n = int(n)
    if (l is None) == (xi is None):
        raise InvalidParameter("give exactly one of l and xi")
    if l is not None:
        xi = eccentricity(n, int(l))
    xi = min(float(xi), XI_CAP)
    if omega_scale != 1.0 and mode == "dynamic":
        raise InvalidParameter("a dynamic orbit moves at its Kepler frequency")
    return OrbitPair(n=n, l=l, xi=xi, semi_major=float(n * n), omega=omega_scale * 2.0 / n**3,
                     phase=phase, apsis_angle=apsis_angle, mode=mode, ctx=ctx)


def precess(orbit: OrbitPair, omega_prec: Optional[float] = None) -> OrbitPair:
    """Return the orbit with its apsidal line rotating at ``omega_prec``.

    The default rate is one fifth of the Kepler frequency 2/n^3.
    """
    if omega_prec is None:
        omega_prec = DEFAULT_PRECESSION * 2.0 / orbit.n**3
    return replace(orbit, omega_prec=float(omega_prec))


def pair_energy(positions, velocities, ctx: MaterialContext = DEFAULT_CONTEXT) -> float:
    """Relative kinetic plus bare Coulomb energy of an (electron, hole) pair.

    Coincident charges return ``-inf``, which callers treat as a collision.
    """
    positions = np.asarray(positions, dtype=float)
    velocities = np.asarray(velocities, dtype=float)
    r = float(np.linalg.norm(positions[0] - positions[1]))
    dv = velocities[0] - velocities[1]
    ke = 0.5 * 0.5 * float(dv @ dv)
    if r == 0.0:
        return -math.inf
    return ke - ctx.coulomb_k_scaled / r


class PrescribedOrbitSource(ExternalSource):
    """The pair's two charges moving on the (precessing) orbit; feels no plasma."""

    def __init__(self, orbit: OrbitPair):
        self.orbit = orbit
        self._q = np.array([-1.0, 1.0])

    def charges_at(self, t):
        re, rh = self.orbit.positions(t)
        return np.ascontiguousarray(np.vstack([re, rh])), self._q


def prescribed_orbit_source(orbit: OrbitPair) -> PrescribedOrbitSource:
    if orbit.mode != "prescribed":
        raise InvalidParameter("only prescribed orbits can drive the plasma as a source")
    return PrescribedOrbitSource(orbit)


class DynamicPair(Attachment):
    """Electron and hole integrated with the plasma, with full back-action.

    State layout: r_e, r_h, v_e, v_h. The pair attracts itself through the
    bare Coulomb force and interacts with the plasma through the soft core.
    """

    size = 12

    def __init__(self, orbit: OrbitPair, t0: float = 0.0):
        ctx = orbit.ctx
        self.orbit = orbit
        self.m = np.array([ctx.mass_scaled(ctx.m_e_eff), ctx.mass_scaled(ctx.m_h_eff)])
        self.q = np.array([-1.0, 1.0])
        self.kc = ctx.coulomb_k_scaled
        self.t0 = t0
        self._pts = np.zeros((2, 3))
        self._field = np.zeros((2, 3))

    def initial(self):
        re, rh = self.orbit.positions(0.0)
        ve, vh = self.orbit.velocities(0.0)
        return np.concatenate([re, rh, ve, vh])

    def scale(self):
        a = self.orbit.semi_major
        v = a * self.orbit.omega
        return np.concatenate([np.full(6, a), np.full(6, v)])

    def rhs(self, t, y, pos, charges, plasma_forces, a2, kc):
        pts = self._pts
        pts[0] = y[0:3]
        pts[1] = y[3:6]
        d = pts[0] - pts[1]
        r3 = float(d @ d) ** 1.5
        internal = -self.kc * d / r3  # force on the electron
        acc = np.empty(6)
        if pos.shape[0]:
            kernels.fields_at(pts, pos, charges, a2, kc, self._field)
            kernels.add_charge_forces(pos, charges, pts, self.q, a2, kc, plasma_forces)
            f_e = self.q[0] * self._field[0] + internal
            f_h = self.q[1] * self._field[1] - internal
        else:
            f_e, f_h = internal, -internal
        acc[0:3] = f_e / self.m[0]
        acc[3:6] = f_h / self.m[1]
        return np.concatenate([y[6:12], acc])

    @staticmethod
    def split(y):
        return np.vstack([y[0:3], y[3:6]]), np.vstack([y[6:9], y[9:12]])


def empty_plasma(ctx: MaterialContext = DEFAULT_CONTEXT, soft_core: float = 1.0) -> PlasmaState:
    """A plasma without particles, for vacuum reference runs."""
    z = np.zeros((0, 3))
    return PlasmaState(positions=z, velocities=z.copy(), charges=np.zeros(0), masses=np.zeros(0),
                       species=np.zeros(0, dtype=np.int64), soft_core=soft_core,
                       trap_radius=1.0, trap_kT=0.0, ctx=ctx)


@dataclass
class SurvivalRecord:
    """Per-trajectory decay times with censoring, Kaplan-Meier curve and fit.

    ``tau`` is the censored-exponential maximum-likelihood lifetime (scaled
    time). When nothing decays, ``tau`` is None and ``tau_lower`` holds the
    95% one-sided lower bound (total exposure / 3).
    """

    times: np.ndarray
    decayed: np.ndarray
    curve_t: np.ndarray
    curve_s: np.ndarray
    at_risk: np.ndarray
    tau: Optional[float]
    tau_stderr: Optional[float]
    tau_lower: Optional[float]
    t_ryd: float
    failures: int = 0

    @property
    def censored_all(self) -> bool:
        return self.tau is None

    def write_csv(self, path, ctx: MaterialContext = DEFAULT_CONTEXT):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "S", "at_risk"])
            for t, s, k in zip(self.curve_t, self.curve_s, self.at_risk):
                w.writerow([f"{ctx.to_si(t, 'time'):.9e}", f"{s:.9g}", int(k)])


def survival_from_times(times, decayed, t_ryd: float = 1.0, failures: int = 0) -> SurvivalRecord:
    """Kaplan-Meier curve and censored exponential fit from event/censor times."""
    times = np.asarray(times, dtype=float)
    decayed = np.asarray(decayed, dtype=bool)
    order = np.lexsort((~decayed, times))
    times, decayed = times[order], decayed[order]
    curve_t, curve_s, at_risk = [0.0], [1.0], [len(times)]
    s = 1.0
    remaining = len(times)
    for t in np.unique(times):
        here = times == t
        d = int(np.sum(decayed & here))
        if d:
            s *= 1.0 - d / remaining
            curve_t.append(float(t))
            curve_s.append(s)
            at_risk.append(remaining)
        remaining -= int(here.sum())
    exposure = float(times.sum())
    events = int(decayed.sum())
    if events:
        tau, err, lower = exposure / events, exposure / events / math.sqrt(events), None
    else:
        tau, err, lower = None, None, exposure / 3.0
    return SurvivalRecord(times=times, decayed=decayed, curve_t=np.array(curve_t),
                          curve_s=np.array(curve_s), at_risk=np.array(at_risk), tau=tau,
                          tau_stderr=err, tau_lower=lower, t_ryd=t_ryd, failures=failures)


def run_pair(orbit: OrbitPair, state: PlasmaState, t_cap: float, cfg: IntegratorConfig,
             check_every: float):
    """Evolve a dynamic pair in ``state`` until it leaves [E_{n-1}, E_{n+1}] or ``t_cap``.

    Returns (time, decayed).
    """
    n = orbit.n
    e_lo = -1.0 / (n - 1) ** 2
    e_hi = -1.0 / (n + 1) ** 2
    pair = DynamicPair(orbit)
    sim = PlasmaSimulation(state, cfg, attachments=[pair])
    t0 = sim.t
    steps = int(math.ceil(t_cap / check_every))
    for k in range(1, steps + 1):
        sim.advance_to(t0 + min(k * check_every, t_cap))
        e = pair_energy(*DynamicPair.split(sim.extras(0)), orbit.ctx)
        if not e_lo <= e <= e_hi:
            return sim.t - t0, True
    return t_cap, False


def classical_lifetime_mc(n: int, l: Optional[int], plasma_params: Optional[PlasmaParams],
                          n_traj: int, seed, *, xi: Optional[float] = None,
                          n_particles: int = 128, prerun_periods: float = 10.0,
                          cap_periods: float = 200.0, cfg: Optional[IntegratorConfig] = None,
                          checks_per_period: int = 20,
                          ctx: MaterialContext = DEFAULT_CONTEXT) -> SurvivalRecord:
    """Survival of dynamic pairs in freshly equilibrated plasmas.

    Each trajectory draws its plasma and orbital phase from its own child of
    ``numpy.random.SeedSequence(seed)``. ``plasma_params=None`` runs the
    isolated pair.
    """
    if n < 2:
        raise InvalidParameter("the decay window needs n >= 2")
    if n_traj < 1:
        raise InvalidParameter("need at least one trajectory")
    cfg = cfg or IntegratorConfig(rtol=1e-7, atol=1e-7)
    if plasma_params is not None:
        ctx = plasma_params.ctx
    base = init_kepler(n, l, ctx, xi=xi, mode="dynamic")
    t_cap = cap_periods * base.period
    times, decayed, failures = [], [], 0
    for child in seed_sequence(seed).spawn(n_traj):
        rng = np.random.default_rng(child)
        orbit = replace(base, phase=float(rng.uniform(0, 2 * math.pi)),
                        apsis_angle=float(rng.uniform(0, 2 * math.pi)))
        if plasma_params is None:
            state = empty_plasma(ctx)
        else:
            state = init_plasma(n_particles, plasma_params, rng)
            state, _ = equilibrate(state, plasma_params, prerun_periods, cfg)
        try:
            t, dec = run_pair(orbit, state, t_cap, cfg, base.period / checks_per_period)
        except IntegrationFailure:
            failures += 1
            continue
        times.append(t)
        decayed.append(dec)
    return survival_from_times(times, decayed, base.period, failures)


__all__ = [
    "OrbitPair", "init_kepler", "eccentricity", "precess", "pair_energy", "solve_kepler",
    "prescribed_orbit_source", "PrescribedOrbitSource", "DynamicPair", "SurvivalRecord",
    "survival_from_times", "classical_lifetime_mc", "run_pair", "empty_plasma",
]
