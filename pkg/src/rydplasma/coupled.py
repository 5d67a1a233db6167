"""Energy exchange between two dipole-coupled oscillator excitons inside a plasma.

Both oscillators point along z and sit at (-D/2, 0, 0) and (D/2, 0, 0).
They interact through H_int = -g x_1 x_2 with g = kc/D^3 and each couples
to the shared plasma as in :mod:`rydplasma.twa`. Times and energies are
scaled; energies are reported in units of hbar omega.

Ensemble means use the exact vacuum evolution as a control variate: every
sample's vacuum energy difference, computed in closed form from its initial
point, is subtracted and the exact vacuum mean added back. The estimator is
unbiased and its noise comes only from what the plasma changes.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import expm

from .integrator import IntegrationFailure, IntegratorConfig
from .plasma import PlasmaSimulation, equilibrate, init_plasma
from .screening import debye_dipole_field
from .twa import OscillatorBank, OscillatorSpec, sample_signed
from .units import (DEFAULT_CONTEXT, KB, InvalidParameter, MaterialContext, PlasmaParams,
                    seed_sequence)

NEVER = math.inf


def coupling_constant(D: float, ctx: MaterialContext = DEFAULT_CONTEXT,
                      q1: float = 1.0, q2: float = 1.0) -> float:
    if D <= 0:
        raise InvalidParameter("separation must be positive")
    return ctx.coulomb_k_scaled * q1 * q2 / D**3


def transfer_time(mass: float, omega: float, g: float) -> float:
    """pi m omega / g, or ``NEVER`` when the coupling vanishes or the ratio overflows."""
    if g == 0:
        return NEVER
    with np.errstate(over="ignore", divide="ignore"):
        value = math.pi * mass * omega / abs(g) if abs(g) > 0 else NEVER
    return value if math.isfinite(value) else NEVER


def vacuum_transfer_time(n: int, D: float, ctx: MaterialContext = DEFAULT_CONTEXT,
                         oscillator_mass: str = "electron") -> float:
    """Half beat period of two identical oscillators of level n at separation D (scaled)."""
    spec = OscillatorSpec.for_level(n, ctx, oscillator_mass)
    try:
        g = coupling_constant(D, ctx)
    except OverflowError:
        return NEVER
    return transfer_time(spec.mass, spec.omega, g)


def screened_coupling_ratio(D: float, lam: float, soft_core: float = 0.0) -> float:
    """Debye-screened over bare field of a z dipole at distance D along x."""
    r = np.array([D, 0.0, 0.0])
    z = np.array([0.0, 0.0, 1.0])
    return float(debye_dipole_field(z, r, lam, soft_core)[2]
                 / debye_dipole_field(z, r, math.inf, soft_core)[2])


def _generator(mass: float, omega: float, g: float) -> np.ndarray:
    """d/dt (x1, x2, p1, p2) for the bare coupled pair."""
    A = np.zeros((4, 4))
    A[0, 2] = A[1, 3] = 1.0 / mass
    A[2, 0] = A[3, 1] = -mass * omega**2
    A[2, 1] = A[3, 0] = g
    return A


def vacuum_propagators(t, mass: float, omega: float, g: float) -> np.ndarray:
    """Matrices M(t) with z(t) = M(t) z(0), z = (x1, x2, p1, p2); shape (T, 4, 4)."""
    A = _generator(mass, omega, g)
    return np.array([expm(A * float(ti)) for ti in np.atleast_1d(t)])


def _energies(z, mass, omega):
    """Oscillator energies in units of hbar omega; z has (..., 4) layout x1, x2, p1, p2."""
    x, p = z[..., :2], z[..., 2:]
    return (0.5 * p**2 / mass + 0.5 * mass * omega**2 * x**2) / omega


def vacuum_energy_curves(t, mass: float, omega: float, g: float, n1: int, n2: int = 0):
    """Exact mean energies (E1, E2) in hbar omega for eigenstates n1, n2 at t = 0.

    Only second moments enter: <x^2> = (n + 1/2)/(m omega), <p^2> = (n + 1/2) m omega.
    """
    M = vacuum_propagators(t, mass, omega, g)
    cov0 = np.diag([(n1 + 0.5) / (mass * omega), (n2 + 0.5) / (mass * omega),
                    (n1 + 0.5) * mass * omega, (n2 + 0.5) * mass * omega])
    cov = np.einsum("tij,jk,tlk->til", M, cov0, M)
    diag = np.diagonal(cov, axis1=1, axis2=2)
    E = (0.5 * diag[:, 2:] / mass + 0.5 * mass * omega**2 * diag[:, :2]) / omega
    return E[:, 0], E[:, 1]


@dataclass
class TransferTrace:
    """Mean oscillator energies (hbar omega units) versus scaled time."""

    t: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    E1_err: np.ndarray
    E2_err: np.ndarray
    dE: np.ndarray
    dE_err: np.ndarray
    dE_scaled: np.ndarray = None
    dE_scaled_err: np.ndarray = None
    lifetime: float = NEVER
    transfer_time: float = float("nan")
    transfer_time_err: float = float("nan")
    vacuum_time: float = float("nan")
    debye_time: float = float("nan")
    regime_valid: bool = True
    trajectories: int = 0
    dropped: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dE_scaled is None:
            self.dE_scaled = np.array(self.dE, dtype=float)
            self.dE_scaled_err = np.array(self.dE_err, dtype=float)

    def z_scores(self) -> tuple[float, float]:
        """(T - T_vacuum)/sigma and (T_debye - T)/sigma for the extracted transfer time."""
        s = self.transfer_time_err
        if not (s > 0):
            return float("nan"), float("nan")
        return ((self.transfer_time - self.vacuum_time) / s,
                (self.debye_time - self.transfer_time) / s)

    def write_csv(self, path, ctx: MaterialContext = DEFAULT_CONTEXT):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "E1", "E2", "dE_scaled", "stderr"])
            for i, t in enumerate(self.t):
                w.writerow([f"{ctx.to_si(t, 'time'):.9e}", f"{self.E1[i]:.9g}",
                            f"{self.E2[i]:.9g}", f"{self.dE_scaled[i]:.9g}",
                            f"{self.dE_scaled_err[i]:.9g}"])


def compensate_thermalization(trace: TransferTrace, tau: float) -> TransferTrace:
    """Multiply the energy difference by exp(t/tau); ``tau=inf`` changes nothing."""
    if not tau > 0:
        raise InvalidParameter("lifetime must be positive")
    factor = np.exp(trace.t / tau) if math.isfinite(tau) else np.ones_like(trace.t)
    return replace(trace, dE_scaled=trace.dE * factor, dE_scaled_err=trace.dE_err * factor,
                   lifetime=float(tau))


def first_zero_crossing(t, y, err=None, half_width: int = 3):
    """Time of the first sign change of ``y`` and its standard error.

    A straight line is fitted through the points around the change, weighted
    by ``err`` when all of those errors are positive. The error propagates
    the point errors through t0 = -a/b; it is zero for exact data and NaN
    when no errors are given.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    sign = np.sign(y)
    change = np.flatnonzero((sign[1:] * sign[:-1] < 0) | ((sign[1:] == 0) & (sign[:-1] != 0)))
    if not len(change):
        return float("nan"), float("nan")
    i = int(change[0])
    lo, hi = max(0, i - half_width + 1), min(len(t), i + half_width + 1)
    tt, yy = t[lo:hi], y[lo:hi]
    ee = None if err is None else np.asarray(err, dtype=float)[lo:hi]
    weighted = ee is not None and bool(np.all(ee > 0))
    sig = ee if weighted else np.ones_like(yy)
    tc = tt.mean()
    A = np.column_stack([np.ones_like(tt), tt - tc]) / sig[:, None]
    coef, *_ = np.linalg.lstsq(A, yy / sig, rcond=None)
    a, b = coef
    t0 = float(tc - a / b)
    if ee is None:
        return t0, float("nan")
    if not weighted:
        return t0, 0.0
    cov = np.linalg.inv(A.T @ A)
    # gradient of t0 = tc - a/b with respect to (a, b)
    grad = np.array([-1.0 / b, a / b**2])
    return t0, float(math.sqrt(max(grad @ cov @ grad, 0.0)))


def fit_thermalization(t, total, total_err, equilibrium: float) -> float:
    """Relaxation time of E1 + E2 towards ``equilibrium`` from its initial slope.

    A straight line through the summed energy gives S0 and dS/dt; the
    lifetime is (equilibrium - S0)/(dS/dt). Slopes within two standard errors
    of zero, or pointing away from equilibrium, give ``inf``.
    """
    t = np.asarray(t, dtype=float)
    S = np.asarray(total, dtype=float)
    e = np.asarray(total_err, dtype=float)
    e = np.where(e > 0, e, np.max(e) if np.any(e > 0) else 1.0)
    A = np.column_stack([np.ones_like(t), t]) / e[:, None]
    coef, *_ = np.linalg.lstsq(A, S / e, rcond=None)
    cov = np.linalg.inv(A.T @ A)
    s0, slope = coef
    if abs(slope) <= 2.0 * math.sqrt(cov[1, 1]) or slope * (equilibrium - s0) <= 0:
        return NEVER
    return float((equilibrium - s0) / slope)


def _estimate(values, w, Z):
    """Signed-weight mean and standard error over axis 1 (samples)."""
    n = values.shape[1]
    terms = Z * w[None, :] * values
    mean = terms.mean(axis=1)
    err = terms.std(axis=1, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, err


def coupled_transfer(n: int, D: float, plasma_params: Optional[PlasmaParams], n_traj: int, seed,
                     *, lifetime: Optional[float] = None, t_max: Optional[float] = None,
                     n_out: int = 200, reaction: bool = True, batch_size: int = 1,
                     n_particles: int = 64, prerun_periods: float = 10.0,
                     cfg: Optional[IntegratorConfig] = None, oscillator_mass: str = "electron",
                     ctx: Optional[MaterialContext] = None) -> TransferTrace:
    """Ensemble evolution of the coupled pair; oscillator 1 starts in n_osc(n), 2 in the ground state.

    ``D`` is scaled. ``lifetime`` (scaled) is used for the compensation and
    the regime check; when omitted it is fitted from the relaxation of the
    summed energy towards 2 kT. ``t_max`` defaults to 0.75 of the screened
    transfer time (or of the vacuum time without plasma), which contains the
    first zero crossing under both hypotheses.
    """
    ctx = ctx or (plasma_params.ctx if plasma_params is not None else DEFAULT_CONTEXT)
    if n_traj < 2:
        raise InvalidParameter("need at least two trajectories")
    if reaction and batch_size != 1:
        raise InvalidParameter("with back-reaction every sample needs its own plasma")
    spec = OscillatorSpec.for_level(n, ctx, oscillator_mass)
    m, w0 = spec.mass, spec.omega
    g = coupling_constant(D, ctx)
    t_vac = transfer_time(m, w0, g)
    if plasma_params is not None:
        lam = ctx.to_scaled(plasma_params.debye_length, "length")
        soft = ctx.to_scaled(plasma_params.soft_core, "length")
        t_deb = t_vac / screened_coupling_ratio(D, lam, soft)
    else:
        lam, t_deb = math.inf, t_vac
    if t_max is None:
        t_max = 0.75 * max(t_deb, t_vac)
    times = np.linspace(0.0, t_max, n_out + 1)

    ss = seed_sequence(seed)
    s1, s2, s_plasma = ss.spawn(3)
    ens1 = sample_signed(spec.n_osc, n_traj, s1, mass=m, omega=w0)
    ens2 = sample_signed(0, n_traj, s2, mass=m, omega=w0)
    w = ens1.w * ens2.w
    Z = ens1.Z * ens2.Z
    ell = spec.length
    z0 = np.column_stack([ens1.X * ell, ens2.X * ell, ens1.P / ell, ens2.P / ell])

    M = vacuum_propagators(times, m, w0, g)
    z_vac = np.einsum("tij,nj->tni", M, z0)
    E_vac = _energies(z_vac, m, w0)
    ex1, ex2 = vacuum_energy_curves(times, m, w0, g, spec.n_osc, 0)

    if plasma_params is None:
        E = E_vac
        ok = np.ones(n_traj, dtype=bool)
    else:
        cfg = cfg or IntegratorConfig(rtol=1e-5, atol=1e-5)
        E = np.empty_like(E_vac)
        ok = np.ones(n_traj, dtype=bool)
        centers = np.array([[-0.5 * D, 0.0, 0.0], [0.5 * D, 0.0, 0.0]])
        G = np.array([[0.0, g], [g, 0.0]])
        groups = np.arange(n_traj) // batch_size
        children = s_plasma.spawn(int(groups.max()) + 1)
        stride = times[1] - times[0]
        for k, child in enumerate(children):
            idx = np.flatnonzero(groups == k)
            try:
                state = init_plasma(n_particles, plasma_params, np.random.default_rng(child))
                state, _ = equilibrate(state, plasma_params, prerun_periods, cfg)
                if reaction:
                    j = idx[0]
                    bank = OscillatorBank([m, m], w0, x0=z0[j, :2], p0=z0[j, 2:], centers=centers,
                                          reaction=True, coupling=G)
                else:
                    bank = OscillatorBank([m, m], w0, centers=centers, reaction=False, coupling=G)
                sim = PlasmaSimulation(state, cfg, attachments=[bank])
                rec = [sim.extras(0).copy()]
                sim.run(n_out * stride, sample_every=stride,
                        sampler=lambda s: rec.append(s.extras(0).copy()))
            except IntegrationFailure:
                ok[idx] = False
                continue
            rec = np.array(rec)
            if reaction:
                E[:, idx[0]] = _energies(rec, m, w0)
            else:
                # linear in the initial point: vacuum motion plus the rest-started response
                E[:, idx] = _energies(z_vac[:, idx] + rec[:, None, :], m, w0)

    dropped = int((~ok).sum())
    if dropped == n_traj:
        raise IntegrationFailure("every trajectory failed", 0.0, 0.0, float("nan"))
    if dropped > 0.01 * n_traj:
        warnings.warn(f"{dropped} of {n_traj} coupled trajectories dropped", stacklevel=2)
    sel = ok
    d1, e1 = _estimate(E[:, sel, 0] - E_vac[:, sel, 0], w[sel], Z)
    d2, e2 = _estimate(E[:, sel, 1] - E_vac[:, sel, 1], w[sel], Z)
    dd, ed = _estimate((E[:, sel, 0] - E[:, sel, 1]) - (E_vac[:, sel, 0] - E_vac[:, sel, 1]),
                       w[sel], Z)
    ds, es = _estimate((E[:, sel, 0] + E[:, sel, 1]) - (E_vac[:, sel, 0] + E_vac[:, sel, 1]),
                       w[sel], Z)
    E1, E2 = ex1 + d1, ex2 + d2
    dE = (ex1 - ex2) + dd

    if lifetime is None:
        if plasma_params is None:
            lifetime = NEVER
        else:
            kT = ctx.to_scaled(KB * plasma_params.temperature, "energy") / w0
            lifetime = fit_thermalization(times, ex1 + ex2 + ds, es, 2.0 * kT)
    trace = TransferTrace(t=times, E1=E1, E2=E2, E1_err=e1, E2_err=e2, dE=dE, dE_err=ed,
                          vacuum_time=t_vac, debye_time=t_deb, trajectories=int(sel.sum()),
                          dropped=dropped,
                          meta={"n": n, "n_osc": spec.n_osc, "D": D, "g": g,
                                "debye_length": lam, "reaction": reaction})
    trace = compensate_thermalization(trace, lifetime)
    t0, s0 = first_zero_crossing(times, trace.dE_scaled, trace.dE_scaled_err)
    trace.transfer_time, trace.transfer_time_err = 2.0 * t0, 2.0 * s0
    trace.regime_valid = bool(plasma_params is None or t_vac < lifetime)
    if not trace.regime_valid:
        warnings.warn("transfer time exceeds the exciton lifetime: run is regime-invalid",
                      stacklevel=2)
    return trace


__all__ = [
    "NEVER", "coupling_constant", "transfer_time", "vacuum_transfer_time",
    "screened_coupling_ratio", "vacuum_propagators", "vacuum_energy_curves", "TransferTrace",
    "compensate_thermalization", "first_zero_crossing", "fit_thermalization", "coupled_transfer",
]
