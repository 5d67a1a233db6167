"""Signed-weight truncated Wigner evolution of the oscillator-mapped exciton.

Phase-space points are kept in natural oscillator units X = x/l, P = p l/hbar
with l = sqrt(hbar/(m omega)), so that s = X^2 + P^2 = 2H/(hbar omega). In
these units the eigenstate Wigner function is (-1)^n exp(-s) L_n(2s)/pi and
the Weyl symbol of |m><m| is 2 (-1)^m exp(-s) L_m(2s).

The exciton coordinate x is the hole-minus-electron separation along the
oscillator axis, so the exciton dipole is e x along that axis.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.special import eval_laguerre, roots_laguerre

from . import kernels
from .fitting import PowerLawFit
from .integrator import IntegrationFailure, IntegratorConfig
from .plasma import Attachment, PlasmaSimulation, PlasmaState, equilibrate, init_plasma
from .units import (DEFAULT_CONTEXT, InvalidParameter, MaterialContext, PlasmaParams,
                    rydberg_scales, seed_sequence)

BAND = 5
MIN_EFFICIENCY = 1e-4


# ---------------------------------------------------------------------------
# Wigner functions
# ---------------------------------------------------------------------------
def ho_wigner(n_osc: int, x, p, m: float = 1.0, omega: float = 1.0, hbar: float = 1.0):
    """Wigner function of the n-th oscillator eigenstate at (x, p)."""
    if n_osc < 0:
        raise InvalidParameter("oscillator level must be >= 0")
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    s = 2.0 * (p * p / (2.0 * m) + 0.5 * m * omega**2 * x * x) / (hbar * omega)
    return (-1.0) ** n_osc / (math.pi * hbar) * np.exp(-s) * eval_laguerre(n_osc, 2.0 * s)


def weyl_symbol(level: int, s):
    """Weyl symbol of |m><m| as a function of s = X^2 + P^2."""
    s = np.asarray(s, dtype=float)
    return 2.0 * (-1.0) ** level * np.exp(-s) * eval_laguerre(level, 2.0 * s)


def truncation_box(n_osc: int) -> float:
    """Half-width of the sampling box in natural widths."""
    return 6.0 + 2.0 * math.sqrt(n_osc)


def wigner_abs_norm(n_osc: int, box: Optional[float] = None) -> float:
    """Z = integral of |W_n| over phase space.

    The integrand depends on s only, so Z = int_0^S |exp(-s) L_n(2s)| ds
    with S = box^2; the sign changes of L_n are passed as breakpoints.
    """
    if n_osc == 0:
        return 1.0 - math.exp(-(box if box is not None else truncation_box(0)) ** 2)
    box = truncation_box(n_osc) if box is None else box
    s_max = box * box
    roots = np.sort(roots_laguerre(n_osc)[0]) / 2.0
    edges = np.concatenate([[0.0], roots[roots < s_max], [s_max]])
    f = lambda s: abs(math.exp(-s) * eval_laguerre(n_osc, 2.0 * s))
    return float(sum(integrate.quad(f, a, b, limit=200, epsabs=1e-13, epsrel=1e-12)[0]
                     for a, b in zip(edges[:-1], edges[1:])))


@dataclass
class SignedEnsemble:
    """Phase-space samples with +-1 weights drawn from |W_n|/Z."""

    X: np.ndarray
    P: np.ndarray
    w: np.ndarray
    n_osc: int
    mass: float
    omega: float
    Z: float
    hbar: float = 1.0

    @property
    def size(self) -> int:
        return self.X.size

    @property
    def length(self) -> float:
        return math.sqrt(self.hbar / (self.mass * self.omega))

    @property
    def x(self):
        return self.X * self.length

    @property
    def p(self):
        return self.P * self.hbar / self.length

    def energies(self, X=None, P=None):
        X = self.X if X is None else X
        P = self.P if P is None else P
        return 0.5 * self.hbar * self.omega * (X * X + P * P)

    def subset(self, sl) -> "SignedEnsemble":
        return SignedEnsemble(self.X[sl], self.P[sl], self.w[sl], self.n_osc, self.mass,
                              self.omega, self.Z, self.hbar)


def sample_signed(n_osc: int, n_traj: int, seed, mass: float = 1.0, omega: float = 1.0,
                  box: Optional[float] = None, hbar: float = 1.0) -> SignedEnsemble:
    """Rejection-sample ``n_traj`` points from |W_n| inside the truncation box."""
    if n_traj < 1:
        raise InvalidParameter("need at least one trajectory")
    if n_osc < 0:
        raise InvalidParameter("oscillator level must be >= 0")
    box = truncation_box(n_osc) if box is None else float(box)
    rng = np.random.default_rng(seed)
    Z = wigner_abs_norm(n_osc, box)
    efficiency = math.pi * Z / (2.0 * box) ** 2  # max |exp(-s) L_n(2s)| = 1 at s = 0
    if efficiency < MIN_EFFICIENCY:
        raise InvalidParameter(f"rejection efficiency {efficiency:.2e} too low; shrink the box")
    X = np.empty(n_traj)
    P = np.empty(n_traj)
    w = np.empty(n_traj)
    filled = 0
    chunk = int(min(max(4 * n_traj / efficiency, 1024), 2_000_000))
    while filled < n_traj:
        xs = rng.uniform(-box, box, chunk)
        ps = rng.uniform(-box, box, chunk)
        f = np.exp(-(xs * xs + ps * ps)) * eval_laguerre(n_osc, 2.0 * (xs * xs + ps * ps))
        keep = rng.random(chunk) < np.abs(f)
        k = min(int(keep.sum()), n_traj - filled)
        X[filled:filled + k] = xs[keep][:k]
        P[filled:filled + k] = ps[keep][:k]
        w[filled:filled + k] = np.where(f[keep][:k] * (-1) ** n_osc >= 0, 1.0, -1.0)
        filled += k
    return SignedEnsemble(X, P, w, int(n_osc), float(mass), float(omega), Z, hbar)


def band_levels(n_osc: int, band: int = BAND) -> np.ndarray:
    return np.arange(max(0, n_osc - band), n_osc + band + 1)


def reconstruct(X, P, w, Z: float, levels: Sequence[int], groups=None):
    """Populations rho_mm = (Z/N) sum_j w_j W~_m(X_j, P_j) and their standard errors.

    ``X``/``P`` may carry leading time axes; the trajectory axis is last.
    With ``groups`` (one label per trajectory) the error comes from the
    spread of group means, otherwise from the per-trajectory spread.
    """
    X = np.asarray(X, dtype=float)
    s = X * X + np.asarray(P, dtype=float) ** 2
    w = np.asarray(w, dtype=float)
    pops, errs = [], []
    for m in levels:
        v = Z * w * weyl_symbol(int(m), s)
        mean = v.mean(axis=-1)
        if groups is None:
            n = v.shape[-1]
            err = v.std(axis=-1, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
        else:
            labels = np.unique(groups)
            if len(labels) > 1:
                gm = np.stack([v[..., groups == g].mean(axis=-1) for g in labels], axis=-1)
                err = gm.std(axis=-1, ddof=1) / math.sqrt(len(labels))
            else:
                err = v.std(axis=-1, ddof=1) / math.sqrt(v.shape[-1])
        pops.append(mean)
        errs.append(err)
    return np.stack(pops, axis=-1), np.stack(errs, axis=-1)


def displaced_population(n_osc: int, alpha2):
    """|<n|D(alpha)|n>|^2 = exp(-|alpha|^2) L_n(|alpha|^2)^2 (exact reference)."""
    a = np.asarray(alpha2, dtype=float)
    return np.exp(-a) * eval_laguerre(n_osc, a) ** 2


# ---------------------------------------------------------------------------
# oscillators coupled to the plasma
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class OscillatorSpec:
    """Mapped oscillator for principal quantum number n (scaled units)."""

    n: int
    n_osc: int
    mass: float
    omega: float

    @property
    def length(self) -> float:
        return math.sqrt(1.0 / (self.mass * self.omega))

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega

    @classmethod
    def for_level(cls, n: int, ctx: MaterialContext = DEFAULT_CONTEXT,
                  oscillator_mass: str = "electron") -> "OscillatorSpec":
        sc = rydberg_scales(n, ctx, oscillator_mass)
        return cls(n=n, n_osc=sc.n_osc, mass=ctx.mass_scaled(sc.oscillator_mass),
                   omega=ctx.to_scaled(sc.omega_ryd, "frequency"))


def dipole_coupling_force(x: float, state: PlasmaState, center=(0.0, 0.0, 0.0),
                          axis=(0.0, 0.0, 1.0), reaction: bool = True):
    """Force on the oscillator coordinate and reaction forces on the plasma.

    The oscillator feels -k e sum_i q_i (axis . r_i)/|r_i|^3 (soft-cored);
    with ``reaction`` each plasma charge feels the field of the point dipole
    e x axis. Returns (force, (N, 3) array or None).
    """
    center = np.asarray(center, dtype=float)
    axis = np.asarray(axis, dtype=float)
    a2 = state.soft_core**2
    kc = state.ctx.coulomb_k_scaled
    if state.n == 0:
        return 0.0, (np.zeros((0, 3)) if reaction else None)
    force = -kernels.dipole_drive(state.positions, state.charges, center, axis, a2, kc)
    if not reaction:
        return force, None
    out = np.zeros((state.n, 3))
    kernels.add_dipole_forces(state.positions, state.charges, center[None, :],
                              (x * axis)[None, :], a2, kc, out)
    return force, out


class OscillatorBank(Attachment):
    """K one-dimensional oscillators dipole-coupled to the plasma.

    State layout: x_1..x_K, p_1..p_K. ``coupling`` is a symmetric K x K
    matrix G with H_int = -(1/2) sum G_kl x_k x_l. With ``reaction`` the
    plasma feels each oscillator's point dipole.
    """

    def __init__(self, masses, omegas, x0=None, p0=None, centers=None,
                 axis=(0.0, 0.0, 1.0), reaction: bool = False, coupling=None):
        self.m = np.atleast_1d(np.asarray(masses, dtype=float))
        k = self.m.size
        self.w = np.broadcast_to(np.asarray(omegas, dtype=float), (k,)).copy()
        self.x0 = np.zeros(k) if x0 is None else np.broadcast_to(np.asarray(x0, float), (k,)).copy()
        self.p0 = np.zeros(k) if p0 is None else np.broadcast_to(np.asarray(p0, float), (k,)).copy()
        self.centers = (np.zeros((k, 3)) if centers is None
                        else np.ascontiguousarray(np.atleast_2d(centers), dtype=float))
        self.axis = np.asarray(axis, dtype=float)
        self.reaction = reaction
        self.G = None if coupling is None else np.asarray(coupling, dtype=float)
        self.size = 2 * k
        self._moments = np.zeros((k, 3))

    def initial(self):
        return np.concatenate([self.x0, self.p0])

    def scale(self):
        ell = np.sqrt(1.0 / (self.m * self.w))
        return np.concatenate([ell, 1.0 / ell])

    def rhs(self, t, y, pos, charges, plasma_forces, a2, kc):
        k = self.m.size
        x, p = y[:k], y[k:]
        force = -self.m * self.w**2 * x
        if self.G is not None:
            force = force + self.G @ x
        if pos.shape[0]:
            for i in range(k):
                force[i] -= kernels.dipole_drive(pos, charges, self.centers[i], self.axis, a2, kc)
            if self.reaction:
                self._moments[:] = x[:, None] * self.axis[None, :]
                kernels.add_dipole_forces(pos, charges, self.centers, self._moments, a2, kc,
                                          plasma_forces)
        return np.concatenate([p / self.m, force])


# ---------------------------------------------------------------------------
# population traces
# ---------------------------------------------------------------------------
@dataclass
class PopulationTrace:
    """Band populations versus scaled time."""

    t: np.ndarray
    levels: np.ndarray
    pop: np.ndarray
    stderr: np.ndarray
    n_osc: int
    trajectories: int = 0
    dropped: int = 0
    flagged: bool = False
    meta: dict = field(default_factory=dict)

    def level(self, m: Optional[int] = None):
        m = self.n_osc if m is None else m
        idx = int(np.flatnonzero(self.levels == m)[0])
        return self.pop[:, idx], self.stderr[:, idx]

    def write_csv(self, path, ctx: MaterialContext = DEFAULT_CONTEXT):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "level", "population", "stderr"])
            for i, t in enumerate(self.t):
                ts = f"{ctx.to_si(t, 'time'):.9e}"
                for j, m in enumerate(self.levels):
                    w.writerow([ts, int(m), f"{self.pop[i, j]:.9g}", f"{self.stderr[i, j]:.9g}"])


def _free_rotation(X0, P0, phase):
    c, s = np.cos(phase), np.sin(phase)
    return X0 * c + P0 * s, -X0 * s + P0 * c


def _realization(params, n_particles, rng, prerun_periods, cfg):
    state = init_plasma(n_particles, params, rng)
    state, _ = equilibrate(state, params, prerun_periods, cfg)
    return state


def twa_evolve(ensemble: SignedEnsemble, plasma_params: Optional[PlasmaParams], t_max: float,
               stride: float, *, seed=0, n_particles: int = 128, prerun_periods: float = 10.0,
               reaction: bool = True, batch_size: int = 1, cfg: Optional[IntegratorConfig] = None,
               band: int = BAND) -> PopulationTrace:
    """Evolve every sample with its own freshly equilibrated plasma; reconstruct populations.

    Times are scaled; ``stride`` is the output spacing. With ``reaction``
    switched off the oscillator is a linearly driven system, so a plasma
    realization can serve ``batch_size`` samples at once: each sample's
    trajectory is its free rotation plus the response of an oscillator
    started at rest. With ``reaction`` every sample is integrated together
    with its own plasma. ``plasma_params=None`` evolves the free oscillator.
    """
    if stride <= 0 or t_max <= 0:
        raise InvalidParameter("t_max and stride must be positive")
    if reaction and batch_size != 1:
        raise InvalidParameter("with back-reaction every sample needs its own plasma")
    cfg = cfg or IntegratorConfig(rtol=1e-6, atol=1e-6)
    n_out = int(math.floor(t_max / stride + 1e-9))
    times = np.arange(n_out + 1) * stride
    levels = band_levels(ensemble.n_osc, band)
    ell = ensemble.length
    N = ensemble.size
    Xt = np.empty((n_out + 1, N))
    Pt = np.empty((n_out + 1, N))
    ok = np.ones(N, dtype=bool)
    groups = np.arange(N) // batch_size
    phase = ensemble.omega * times[:, None]
    children = seed_sequence(seed).spawn(int(groups.max()) + 1)

    for g, child in enumerate(children):
        idx = np.flatnonzero(groups == g)
        X0, P0 = ensemble.X[idx], ensemble.P[idx]
        if plasma_params is None:
            Xt[:, idx], Pt[:, idx] = _free_rotation(X0[None, :], P0[None, :], phase)
            continue
        rng = np.random.default_rng(child)
        try:
            state = _realization(plasma_params, n_particles, rng, prerun_periods, cfg)
            if reaction:
                bank = OscillatorBank(ensemble.mass, ensemble.omega, x0=X0 * ell,
                                      p0=P0 * ensemble.hbar / ell, reaction=True)
            else:
                bank = OscillatorBank(ensemble.mass, ensemble.omega, reaction=False)
            sim = PlasmaSimulation(state, cfg, attachments=[bank])
            rec = [sim.extras(0).copy()]
            sim.run(n_out * stride, sample_every=stride, sampler=lambda s: rec.append(s.extras(0).copy()))
        except IntegrationFailure:
            ok[idx] = False
            continue
        rec = np.array(rec)
        dX, dP = rec[:, 0] / ell, rec[:, 1] * ell / ensemble.hbar
        if reaction:
            Xt[:, idx], Pt[:, idx] = dX[:, None], dP[:, None]
        else:
            fx, fp = _free_rotation(X0[None, :], P0[None, :], phase)
            Xt[:, idx], Pt[:, idx] = fx + dX[:, None], fp + dP[:, None]

    dropped = int((~ok).sum())
    if dropped == N:
        raise IntegrationFailure("every trajectory failed", 0.0, 0.0, float("nan"))
    pop, err = reconstruct(Xt[:, ok], Pt[:, ok], ensemble.w[ok], ensemble.Z, levels,
                           groups=groups[ok] if batch_size > 1 else None)
    flagged = dropped > 0.01 * N
    if flagged:
        warnings.warn(f"{dropped} of {N} trajectories dropped after integration failures",
                      stacklevel=2)
    return PopulationTrace(t=times, levels=levels, pop=pop, stderr=err, n_osc=ensemble.n_osc,
                           trajectories=N - dropped, dropped=dropped, flagged=flagged)


# ---------------------------------------------------------------------------
# plasma drive records: many staggered windows on one long plasma run
# ---------------------------------------------------------------------------
@dataclass
class DriveRecord:
    """Rest-started response of each oscillator to one plasma run.

    ``X``/``P`` have shape (times, oscillators) in natural units.
    """

    t: np.ndarray
    X: np.ndarray
    P: np.ndarray
    specs: tuple


def record_drive(params: PlasmaParams, specs: Sequence[OscillatorSpec], duration: float,
                 dt: float, seed, *, n_particles: int = 256, prerun_periods: float = 10.0,
                 cfg: Optional[IntegratorConfig] = None) -> DriveRecord:
    """Equilibrate one plasma and record the at-rest responses for ``duration`` (scaled)."""
    cfg = cfg or IntegratorConfig(rtol=1e-5, atol=1e-5)
    rng = np.random.default_rng(seed)
    state = _realization(params, n_particles, rng, prerun_periods, cfg)
    bank = OscillatorBank([s.mass for s in specs], [s.omega for s in specs], reaction=False)
    sim = PlasmaSimulation(state, cfg, attachments=[bank])
    rec = [sim.extras(0).copy()]
    n = int(math.floor(duration / dt + 1e-9))
    sim.run(n * dt, sample_every=dt, sampler=lambda s: rec.append(s.extras(0).copy()))
    rec = np.array(rec)
    k = len(specs)
    ell = np.array([s.length for s in specs])
    return DriveRecord(t=np.arange(n + 1) * dt, X=rec[:, :k] / ell, P=rec[:, k:] * ell,
                       specs=tuple(specs))


def window_displacements(record: DriveRecord, k: int, window: int, spacing: int,
                         stride: int = 1):
    """Complex displacement alpha(tau) (rotating frame) for windows on a record.

    A sample started at t0 moves as its free rotation plus
    d(t) - R(t - t0) d(t0); in the frame rotating with the oscillator this
    is a pure translation b(t) - b(t0) with b = (X + iP) e^{i omega t}.
    Returns shape (n_windows, window // stride + 1).
    """
    if stride < 1 or window % stride:
        raise InvalidParameter("stride must be a positive divisor of the window")
    spec = record.specs[k]
    b = (record.X[:, k] + 1j * record.P[:, k]) * np.exp(1j * spec.omega * record.t)
    starts = np.arange(0, len(b) - window, spacing)
    if len(starts) == 0:
        raise InvalidParameter("record shorter than one window")
    idx = starts[:, None] + np.arange(0, window + 1, stride)[None, :]
    return b[idx] - b[starts][:, None]


def window_trace(records: Sequence[DriveRecord], k: int, window: int, spacing: int,
                 samples_per_window: int, seed, band: int = BAND,
                 levels: Optional[Sequence[int]] = None, stride: int = 1) -> PopulationTrace:
    """TWA populations averaged over staggered windows of several plasma runs.

    Every window gets its own signed samples. Errors come from the spread
    of the per-run means.
    """
    spec = records[0].specs[k]
    levels = band_levels(spec.n_osc, band) if levels is None else np.asarray(levels)
    per_record = []
    total = 0
    for rec, child in zip(records, seed_sequence(seed).spawn(len(records))):
        alpha = window_displacements(rec, k, window, spacing, stride)
        ens = sample_signed(spec.n_osc, samples_per_window * len(alpha), child, spec.mass,
                            spec.omega)
        acc = np.zeros((alpha.shape[1], len(levels)))
        for i, a in enumerate(alpha):
            sl = slice(i * samples_per_window, (i + 1) * samples_per_window)
            s_X = ens.X[None, sl] + a.real[:, None]
            s_P = ens.P[None, sl] + a.imag[:, None]
            pop, _ = reconstruct(s_X, s_P, ens.w[sl], ens.Z, levels)
            acc += pop
        per_record.append(acc / len(alpha))
        total += len(alpha) * samples_per_window
    per_record = np.array(per_record)
    pop = per_record.mean(axis=0)
    if len(records) > 1:
        err = per_record.std(axis=0, ddof=1) / math.sqrt(len(records))
    else:
        err = np.zeros_like(pop)
    dt = records[0].t[1] - records[0].t[0]
    return PopulationTrace(t=np.arange(0, window + 1, stride) * dt, levels=levels, pop=pop, stderr=err,
                           n_osc=spec.n_osc, trajectories=total,
                           meta={"per_record": per_record})


def window_exact(records: Sequence[DriveRecord], k: int, window: int, spacing: int,
                 stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Exact initial-level population of the linearly driven oscillator, window-averaged.

    Without back-reaction each window displaces the eigenstate coherently by
    alpha = Delta b / sqrt(2). Returns (t, population).
    """
    spec = records[0].specs[k]
    acc = []
    for rec in records:
        alpha = window_displacements(rec, k, window, spacing, stride)
        acc.append(displaced_population(spec.n_osc, 0.5 * np.abs(alpha) ** 2).mean(axis=0))
    dt = records[0].t[1] - records[0].t[0]
    return np.arange(0, window + 1, stride) * dt, np.mean(acc, axis=0)


# ---------------------------------------------------------------------------
# lifetimes
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LifetimeFit:
    tau: Optional[float]
    stderr: Optional[float]
    censored: bool
    window: tuple
    n_points: int


def fit_lifetime(trace, level: Optional[int] = None, floor: float = 0.6,
                 ceiling: float = 0.98, min_points: int = 10) -> LifetimeFit:
    """Exponential fit of the early decay of the initial-level population.

    Fits ln rho over the points with floor <= rho/rho(0) <= ceiling that
    precede the first drop below the floor. ``trace`` is a
    :class:`PopulationTrace` or a tuple (t, rho[, stderr]).
    """
    if isinstance(trace, PopulationTrace):
        t = trace.t
        y, e = trace.level(level)
    else:
        t, y = np.asarray(trace[0], float), np.asarray(trace[1], float)
        e = np.asarray(trace[2], float) if len(trace) > 2 else np.zeros_like(y)
    y0 = y[0]
    rel = y / y0
    below = np.flatnonzero(rel < floor)
    end = below[0] if below.size else len(y)
    if not np.any(rel[:end] <= ceiling) and not below.size:
        return LifetimeFit(None, None, True, (float(t[0]), float(t[-1])), 0)
    if end < min_points:
        raise InvalidParameter(f"only {end} points before the population drops below "
                               f"{floor}; refine the output stride")
    sel = np.flatnonzero(rel[:end] <= ceiling)
    if sel.size < 2:
        sel = np.arange(max(0, end - 2), end)
    tt, ly = t[sel], np.log(y[sel])
    es = e[sel]
    if np.all(es > 0):
        wts = y[sel] / es
    else:
        wts = np.ones_like(ly)
    A = np.column_stack([np.ones_like(tt), tt]) * wts[:, None]
    coef, *_ = np.linalg.lstsq(A, ly * wts, rcond=None)
    slope = coef[1]
    if slope >= 0:
        return LifetimeFit(None, None, True, (float(tt[0]), float(tt[-1])), int(sel.size))
    cov = np.linalg.inv(A.T @ A)
    dof = sel.size - 2
    if not np.all(es > 0) and dof > 0:
        resid = ly - (coef[0] + slope * tt)
        cov = cov * float(resid @ resid) / dof
    tau = -1.0 / slope
    err = math.sqrt(max(cov[1, 1], 0.0)) / slope**2
    return LifetimeFit(float(tau), float(err), False, (float(tt[0]), float(tt[-1])), int(sel.size))


def critical_density(fit: PowerLawFit, n: int, ctx: MaterialContext = DEFAULT_CONTEXT) -> float:
    """Density (m^-3) where a fitted tau(rho) = A rho^k (seconds) equals 1/omega_Ryd(n)."""
    if not math.isfinite(fit.stderr) or fit.stderr > 0.5:
        raise InvalidParameter(f"exponent stderr {fit.stderr:.3g} too large to extrapolate")
    if fit.exponent == 0:
        raise InvalidParameter("a density-independent lifetime has no critical density")
    omega = rydberg_scales(n, ctx).omega_ryd
    return float((1.0 / (omega * fit.prefactor)) ** (1.0 / fit.exponent))


def critical_density_at(rho_ref: float, T_ref: float, T) -> np.ndarray:
    """Transfer rho_cr to another temperature with rho_cr ~ T^(-1/2)."""
    return rho_ref * np.sqrt(T_ref / np.asarray(T, dtype=float))


__all__ = [
    "ho_wigner", "weyl_symbol", "wigner_abs_norm", "truncation_box", "SignedEnsemble",
    "sample_signed", "band_levels", "reconstruct", "displaced_population", "OscillatorSpec",
    "dipole_coupling_force", "OscillatorBank", "PopulationTrace", "twa_evolve", "DriveRecord",
    "record_drive", "window_displacements", "window_trace", "window_exact", "LifetimeFit", "fit_lifetime",
    "critical_density", "critical_density_at",
]
