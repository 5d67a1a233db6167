"""Charge passing a harmonic dipole: grid Schroedinger evolution against the TWA.

The dipole coordinate x1 is a harmonic oscillator; the passing charge sits
at R(t) + x2, where R(t) is a prescribed hyperbola-like approach and x2 a
residual coordinate carried by a Gaussian packet. Scaled units (hbar = 1,
kc = 2) throughout; lengths are often quoted in oscillator widths d_h.

The grid solver is Visscher's staggered leap-frog: the real part lives on
integer and the imaginary part on half-integer time steps, with a spectral
kinetic operator on a periodic grid. Its conserved norm is
sum(R^2 + I(t - dt/2) I(t + dt/2)) for a static Hamiltonian.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from .integrator import CashKarp, IntegratorConfig
from .twa import sample_signed, weyl_symbol
from .units import (DEFAULT_CONTEXT, InvalidParameter, MaterialContext, oscillator_index,
                    seed_sequence, wigner_seitz_radius)

REFERENCE_DENSITY = 1e18


class NormDriftError(RuntimeError):
    """The leap-frog norm drifted beyond the abort threshold."""

    def __init__(self, message: str, drift: float, step: int, dt: float, e_max: float):
        super().__init__(f"{message} (drift {drift:.3g} at step {step}, dt*E_max = {dt * e_max:.3g})")
        self.drift = drift
        self.step = step


@dataclass(frozen=True)
class ToyConfig:
    """Toy scattering set-up in scaled units.

    ``x1_half``/``x2_half`` are grid half-widths in d_h; ``None`` sizes them
    from the oscillator turning point and the packet's final width.
    """

    n: int = 6
    n_osc: Optional[int] = None
    mass_m0: float = 1.0
    q1: float = 1.0
    q2: float = 1.0
    rf_over_dh: float = 100.0
    rc_over_dh: float = 20.0
    periods: float = 3.5
    packet_width_dh: float = 2.0
    soft_core_fraction: float = 0.02
    reference_density: float = REFERENCE_DENSITY
    grid: tuple = (128, 128)
    x1_half: Optional[float] = None
    x2_half: Optional[float] = None
    dt_safety: float = 0.25
    n_out: int = 140
    ctx: MaterialContext = field(default=DEFAULT_CONTEXT, repr=False)

    def __post_init__(self):
        if self.n_osc is None:
            object.__setattr__(self, "n_osc", oscillator_index(self.n, self.ctx)[0])
        if self.rc_over_dh <= 0 or self.rf_over_dh < self.rc_over_dh:
            raise InvalidParameter("need 0 < R_c <= R_f")
        if not 0 < self.dt_safety < 1:
            raise InvalidParameter("dt_safety must lie in (0, 1)")
        if self.x1_half is None:
            object.__setattr__(self, "x1_half", math.sqrt(2 * self.n_osc + 1) + 6.0)
        if self.x2_half is None:
            object.__setattr__(self, "x2_half", 6.0 * self.final_packet_width / self.d_h + 4.0)
        if 2 * self.x1_half < 8.0:
            raise InvalidParameter("x1 grid must span at least 8 oscillator widths")
        if self.x1_half < math.sqrt(2 * self.n_osc + 1) + 3.0:
            raise InvalidParameter("x1 grid does not contain the oscillator eigenstate")
        if self.x2_half * self.d_h < 4.0 * self.final_packet_width:
            raise InvalidParameter("x2 grid does not cover the spreading packet")

    @property
    def mass(self) -> float:
        return self.ctx.mass_scaled(self.mass_m0)

    @property
    def omega(self) -> float:
        return 2.0 / self.n**3

    @property
    def d_h(self) -> float:
        return math.sqrt(1.0 / (self.mass * self.omega))

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega

    @property
    def t_final(self) -> float:
        return self.periods * self.period

    @property
    def r_far(self) -> float:
        return self.rf_over_dh * self.d_h

    @property
    def r_close(self) -> float:
        return self.rc_over_dh * self.d_h

    @property
    def soft_core(self) -> float:
        a_ws = self.ctx.to_scaled(wigner_seitz_radius(self.reference_density), "length")
        return self.soft_core_fraction * a_ws

    @property
    def sigma0(self) -> float:
        return self.packet_width_dh * self.d_h

    @property
    def final_packet_width(self) -> float:
        return free_packet_width(self.t_final, self.sigma0, self.mass)

    @property
    def kc(self) -> float:
        return self.ctx.coulomb_k_scaled

    def axes(self):
        n1, n2 = self.grid
        x1 = (np.arange(n1) - n1 // 2) * (2.0 * self.x1_half / n1) * self.d_h
        x2 = (np.arange(n2) - n2 // 2) * (2.0 * self.x2_half / n2) * self.d_h
        return x1, x2


def r_of_t(t, cfg: ToyConfig):
    """R(t) = sqrt(R_c^2 + (1 - 2t/t_f)^2 (R_f^2 - R_c^2)); times outside [0, t_f] are clamped."""
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > cfg.t_final)):
        warnings.warn("time outside [0, t_f] clamped", stacklevel=2)
        t = np.clip(t, 0.0, cfg.t_final)
    u = 1.0 - 2.0 * t / cfg.t_final
    out = np.sqrt(cfg.r_close**2 + u * u * (cfg.r_far**2 - cfg.r_close**2))
    return float(out) if out.ndim == 0 else out


def toy_potential(x1, x2, R: float, cfg: ToyConfig):
    """kc q1 q2 (-1/|R + x1 + x2| + 1/|R - x1 + x2| - 2 x1/R^2), soft-cored denominators."""
    if R <= 0:
        raise InvalidParameter("R must be positive")
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    a2 = cfg.soft_core**2
    plus = R + x1 + x2
    minus = R - x1 + x2
    return cfg.kc * cfg.q1 * cfg.q2 * (-1.0 / np.sqrt(plus**2 + a2) + 1.0 / np.sqrt(minus**2 + a2)
                                       - 2.0 * x1 / R**2)


def toy_forces(x1, x2, R: float, cfg: ToyConfig):
    """(-dV/dx1, -dV/dx2) of :func:`toy_potential`."""
    a2 = cfg.soft_core**2
    plus = R + x1 + x2
    minus = R - x1 + x2
    gp = plus / (plus**2 + a2) ** 1.5
    gm = minus / (minus**2 + a2) ** 1.5
    k = cfg.kc * cfg.q1 * cfg.q2
    return -k * (gp + gm - 2.0 / R**2), -k * (gp - gm)


def ho_eigenfunction(n_osc: int, x, length: float = 1.0):
    """Normalized harmonic-oscillator eigenfunction of width ``length``.

    Uses the stable three-term recurrence for the normalized Hermite functions.
    """
    xi = np.asarray(x, dtype=float) / length
    prev = np.pi**-0.25 * np.exp(-0.5 * xi * xi)
    if n_osc == 0:
        return prev / math.sqrt(length)
    cur = math.sqrt(2.0) * xi * prev
    for k in range(1, n_osc):
        prev, cur = cur, math.sqrt(2.0 / (k + 1)) * xi * cur - math.sqrt(k / (k + 1)) * prev
    return cur / math.sqrt(length)


def gaussian_packet(x, sigma: float):
    """Real Gaussian amplitude with |psi|^2 of standard deviation ``sigma``."""
    x = np.asarray(x, dtype=float)
    return (2.0 * math.pi * sigma**2) ** -0.25 * np.exp(-x * x / (4.0 * sigma**2))


def free_packet_width(t, sigma0: float, mass: float, hbar: float = 1.0):
    """sigma(t) = sigma0 sqrt(1 + (hbar t / (2 m sigma0^2))^2)."""
    t = np.asarray(t, dtype=float)
    return sigma0 * np.sqrt(1.0 + (hbar * t / (2.0 * mass * sigma0**2)) ** 2)


class LeapFrog:
    """Visscher leap-frog for i dpsi/dt = (-lap/2m + V(t)) psi on a periodic grid."""

    def __init__(self, spacings, shape, mass: float, potential, dt: Optional[float] = None,
                 safety: float = 0.5, v_bound: float = 0.0):
        self.shape = tuple(shape)
        self.mass = mass
        self.potential = potential
        ks = [2.0 * math.pi * np.fft.fftfreq(n, d) for n, d in zip(self.shape, spacings)]
        ks[-1] = ks[-1][: self.shape[-1] // 2 + 1]
        grids = np.meshgrid(*ks, indexing="ij")
        self.k2 = sum(g * g for g in grids) / (2.0 * mass)
        self.e_max = float(self.k2.max()) + abs(v_bound)
        self.dt = dt if dt is not None else safety * 2.0 / self.e_max
        if self.dt * self.e_max >= 2.0:
            raise InvalidParameter("time step violates the leap-frog stability bound")
        self.axes = tuple(range(len(self.shape)))

    def h(self, f, V):
        kin = np.fft.irfftn(self.k2 * np.fft.rfftn(f, axes=self.axes), s=self.shape, axes=self.axes)
        return kin + V * f


@dataclass
class ToyTrace:
    t_over_period: np.ndarray
    p0: np.ndarray
    stderr: Optional[np.ndarray] = None
    norm_drift: float = 0.0
    meta: dict = field(default_factory=dict)


def _visscher_overlap(phi, R, Im, Ip, axis_weight):
    """Population of phi(x1) after tracing x2, in the leap-frog inner product."""
    cr = np.tensordot(phi, R, axes=(0, 0)) * axis_weight
    cm = np.tensordot(phi, Im, axes=(0, 0)) * axis_weight
    cp = np.tensordot(phi, Ip, axes=(0, 0)) * axis_weight
    return cr * cr + cm * cp


def se_evolve(cfg: ToyConfig, *, drift_abort: float = 1e-4, return_state: bool = False):
    """Grid evolution of (eigenstate n_osc in x1) x (Gaussian in x2); population of n_osc.

    The population and the norm use the leap-frog inner product, so a
    stationary state keeps both exactly. Aborts with :class:`NormDriftError`
    when the relative norm drift exceeds ``drift_abort``.
    """
    x1, x2 = cfg.axes()
    d1, d2 = x1[1] - x1[0], x2[1] - x2[0]
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    phi = ho_eigenfunction(cfg.n_osc, x1, cfg.d_h)
    psi0 = phi[:, None] * gaussian_packet(x2, cfg.sigma0)[None, :]

    trap = 0.5 * cfg.mass * cfg.omega**2 * X1**2

    def V(t):
        return trap + toy_potential(X1, X2, r_of_t(min(max(t, 0.0), cfg.t_final), cfg), cfg)

    v_bound = float(np.abs(V(0.5 * cfg.t_final)).max())
    lf = LeapFrog((d1, d2), psi0.shape, cfg.mass, V, safety=cfg.dt_safety, v_bound=v_bound)
    dt = lf.dt
    n_steps = int(math.ceil(cfg.t_final / dt))
    dt = cfg.t_final / n_steps
    lf.dt = dt
    R = psi0.copy()
    # I at -dt/2 and +dt/2 from a half step of the exact propagator to first order
    HR = lf.h(R, V(0.0))
    I_minus = 0.5 * dt * HR
    I_plus = -0.5 * dt * HR
    cell = d1 * d2

    def norm(R, Im, Ip):
        return float(np.sum(R * R + Im * Ip) * cell)

    def pop(R, Im, Ip):
        return float(np.sum(_visscher_overlap(phi, R, Im, Ip, d1)) * d2)

    n0 = norm(R, I_minus, I_plus)
    out_every = max(1, n_steps // cfg.n_out)
    ts, ps = [0.0], [pop(R, I_minus, I_plus) / n0]
    drift = 0.0
    for k in range(1, n_steps + 1):
        t_half = (k - 0.5) * dt
        R = R + dt * lf.h(I_plus, V(t_half))
        I_minus = I_plus
        I_plus = I_plus - dt * lf.h(R, V(k * dt))
        if k % out_every == 0 or k == n_steps:
            nk = norm(R, I_minus, I_plus)
            drift = max(drift, abs(nk / n0 - 1.0))
            if drift > drift_abort:
                raise NormDriftError("leap-frog norm drift", drift, k, dt, lf.e_max)
            ts.append(k * dt)
            ps.append(pop(R, I_minus, I_plus) / nk)
    trace = ToyTrace(t_over_period=np.array(ts) / cfg.period, p0=np.array(ps), norm_drift=drift,
                     meta={"grid": cfg.grid, "dt": dt, "steps": n_steps, "n_osc": cfg.n_osc})
    if return_state:
        return trace, (R, I_minus, I_plus)
    return trace


def free_packet_se_width(cfg: ToyConfig, t: float, n_points: int = 2048, half_width: float = None):
    """Width of a free 1D Gaussian packet evolved with the same leap-frog scheme."""
    half_width = half_width or 8.0 * free_packet_width(t, cfg.sigma0, cfg.mass)
    x = (np.arange(n_points) - n_points // 2) * (2.0 * half_width / n_points)
    dx = x[1] - x[0]
    lf = LeapFrog((dx,), (n_points,), cfg.mass, None, safety=cfg.dt_safety)
    n_steps = int(math.ceil(t / lf.dt))
    dt = t / n_steps
    R = gaussian_packet(x, cfg.sigma0)
    HR = lf.h(R, 0.0)
    I_plus = -0.5 * dt * HR
    I_prev = 0.5 * dt * HR
    for _ in range(n_steps):
        R = R + dt * lf.h(I_plus, 0.0)
        I_prev = I_plus
        I_plus = I_plus - dt * lf.h(R, 0.0)
    dens = R * R + I_prev * I_plus
    dens = dens / dens.sum()
    mean = float(np.sum(x * dens))
    return float(math.sqrt(np.sum((x - mean) ** 2 * dens)))


def twa_toy(cfg: ToyConfig, n_traj: int, seed, *, chunk: int = 200_000,
            rtol: float = 1e-7) -> ToyTrace:
    """Signed-weight trajectories on the toy Hamiltonian; population of n_osc versus time.

    x1 is sampled from the eigenstate Wigner function and x2 from the
    (positive) Gaussian Wigner function of the packet. Output times match
    :func:`se_evolve`'s nominal spacing t_f / n_out.
    """
    if n_traj < 2:
        raise InvalidParameter("need at least two trajectories")
    times = np.linspace(0.0, cfg.t_final, cfg.n_out + 1)
    m, w0, ell = cfg.mass, cfg.omega, cfg.d_h
    ss = seed_sequence(seed)
    s_osc, s_packet = ss.spawn(2)
    ens = sample_signed(cfg.n_osc, n_traj, s_osc, mass=m, omega=w0)
    rng = np.random.default_rng(s_packet)
    x2 = rng.normal(0.0, cfg.sigma0, n_traj)
    p2 = rng.normal(0.0, 0.5 / cfg.sigma0, n_traj)
    sums = np.zeros(len(times))
    sq = np.zeros(len(times))
    for lo in range(0, n_traj, chunk):
        sl = slice(lo, min(n_traj, lo + chunk))
        k = sl.stop - sl.start

        def rhs(t, y):
            a, b, pa, pb = y[:k], y[k:2 * k], y[2 * k:3 * k], y[3 * k:]
            f1, f2 = toy_forces(a, b, r_of_t(min(max(t, 0.0), cfg.t_final), cfg), cfg)
            return np.concatenate([pa / m, pb / m, -m * w0**2 * a + f1, f2])

        y = np.concatenate([ens.X[sl] * ell, x2[sl], ens.P[sl] / ell, p2[sl]])
        scale = np.concatenate([np.full(2 * k, ell), np.full(2 * k, 1.0 / ell)])
        stepper = CashKarp(rhs, IntegratorConfig(rtol=rtol, atol=rtol), scale)
        Xs = np.empty((len(times), k))
        Ps = np.empty((len(times), k))
        Xs[0], Ps[0] = ens.X[sl], ens.P[sl]
        h = None
        for i in range(1, len(times)):
            y, h = stepper.advance(times[i - 1], y, times[i], h)
            Xs[i], Ps[i] = y[:k] / ell, y[2 * k:3 * k] * ell
        vals = ens.Z * ens.w[sl][None, :] * weyl_symbol(cfg.n_osc, Xs**2 + Ps**2)
        sums += vals.sum(axis=1)
        sq += (vals**2).sum(axis=1)
    mean = sums / n_traj
    var = np.maximum(sq / n_traj - mean**2, 0.0)
    return ToyTrace(t_over_period=times / cfg.period, p0=mean,
                    stderr=np.sqrt(var / (n_traj - 1)),
                    meta={"trajectories": n_traj, "n_osc": cfg.n_osc, "Z": ens.Z})


def sup_difference(se: ToyTrace, twa: ToyTrace) -> float:
    """max |P0_TWA - P0_SE| with the SE trace interpolated onto the TWA times."""
    ref = np.interp(twa.t_over_period, se.t_over_period, se.p0)
    return float(np.max(np.abs(twa.p0 - ref)))


def write_traces(path, se: ToyTrace, twa: Optional[ToyTrace] = None):
    """CSV of t/T_osc, P0_SE, P0_TWA, stderr on the TWA time grid (or the SE grid)."""
    grid = twa.t_over_period if twa is not None else se.t_over_period
    p_se = np.interp(grid, se.t_over_period, se.p0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_over_T", "P0_SE", "P0_TWA", "stderr"])
        for i, t in enumerate(grid):
            if twa is None:
                w.writerow([f"{t:.6g}", f"{p_se[i]:.9g}", "", ""])
            else:
                w.writerow([f"{t:.6g}", f"{p_se[i]:.9g}", f"{twa.p0[i]:.9g}",
                            f"{twa.stderr[i]:.9g}"])


__all__ = [
    "ToyConfig", "r_of_t", "toy_potential", "toy_forces", "ho_eigenfunction", "gaussian_packet",
    "free_packet_width", "LeapFrog", "ToyTrace", "se_evolve", "free_packet_se_width", "twa_toy",
    "sup_difference", "write_traces", "NormDriftError",
]
