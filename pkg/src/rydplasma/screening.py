"""Plasma screening of bound charges: measured field ratios and Debye references.

A profile is the time-averaged component of the plasma field along the
electron-hole line at the hole, expressed as ``1 + <E_plasma . u> / E_bare``
with u pointing from the hole to its partner. The bare field is the
two-body Coulomb field at the bin midpoint, so an empty plasma gives exactly
one. Errors come from block averages (blocks of about one plasma period)
accumulated with Welford's update and merged across realizations.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .integrator import IntegratorConfig
from .kepler import OrbitPair, prescribed_orbit_source
from .plasma import (OscillatingDipoles, PlasmaSimulation, PointCharges, RingFragments,
                     dipole_field, equilibrate, init_plasma)
from .units import InvalidParameter, MaterialContext, PlasmaParams, seed_sequence

# 2^(1/3) 3^(1/6), the constant in the printed size-to-Debye relation
PRINTED_SIZE_CONSTANT = 2.0 ** (1.0 / 3.0) * 3.0 ** (1.0 / 6.0)
REFERENCES = ("bare", "debye-point", "debye-dipole")
MIN_BINS = 8


# ---------------------------------------------------------------------------
# analytic references
# ---------------------------------------------------------------------------
def debye_point_ratio(r, lam: float):
    """Debye-screened over bare Coulomb field magnitude, exp(-r/lam)(1 + r/lam)."""
    if lam <= 0:
        raise InvalidParameter("Debye length must be positive")
    x = np.asarray(r, dtype=float) / lam
    return np.exp(-x) * (1.0 + x)


def _screen_factors(rho, lam: float):
    inv = 0.0 if math.isinf(lam) else 1.0 / lam
    e = np.exp(-rho * inv)
    f = e * (rho**-3 + inv * rho**-2)
    df = -e * (3.0 * rho**-4 + 3.0 * inv * rho**-3 + inv * inv * rho**-2)
    return f, df


def debye_dipole_potential(p, r_vec, lam: float, soft_core: float = 0.0, kc: float = 2.0):
    """kc (p.r) exp(-rho/lam)(1/rho + 1/lam)/rho^2 with rho = sqrt(r^2 + a_s^2)."""
    if lam <= 0:
        raise InvalidParameter("Debye length must be positive")
    r_vec = np.asarray(r_vec, dtype=float)
    rho = np.sqrt(np.sum(r_vec**2, axis=-1) + soft_core**2)
    f, _ = _screen_factors(rho, lam)
    return kc * (r_vec @ np.asarray(p, dtype=float)) * f


def debye_dipole_field(p, r_vec, lam: float, soft_core: float = 0.0, kc: float = 2.0):
    """Analytic -grad of :func:`debye_dipole_potential`; ``lam=inf`` is the bare dipole."""
    if lam <= 0:
        raise InvalidParameter("Debye length must be positive")
    p = np.asarray(p, dtype=float)
    r_vec = np.asarray(r_vec, dtype=float)
    rho = np.sqrt(np.sum(r_vec**2, axis=-1) + soft_core**2)
    f, df = _screen_factors(rho, lam)
    pr = r_vec @ p
    return -kc * (p * f[..., None] + (pr * df / rho)[..., None] * r_vec)


def dipole_axis_ratio(r, lam: float, soft_core: float = 0.0):
    """Screened over bare on-axis field of a point dipole at distance ``r``."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    pts = np.column_stack([np.zeros_like(r), np.zeros_like(r), r])
    z = np.array([0.0, 0.0, 1.0])
    return (debye_dipole_field(z, pts, lam, soft_core)[:, 2]
            / debye_dipole_field(z, pts, math.inf, soft_core)[:, 2])


@dataclass(frozen=True)
class SizeRatio:
    printed: float
    direct: float
    gamma: float
    frequency_ratio: float


def size_debye_ratio_from(gamma: float, frequency_ratio: float,
                          constant: float = PRINTED_SIZE_CONSTANT) -> float:
    """constant * sqrt(Gamma) * (omega_p/omega_Ryd)^(2/3)."""
    if gamma < 0 or frequency_ratio <= 0:
        raise InvalidParameter("need Gamma >= 0 and a positive frequency ratio")
    return constant * math.sqrt(gamma) * frequency_ratio ** (2.0 / 3.0)


def size_debye_ratio(n: int, plasma_params: PlasmaParams, ctx: Optional[MaterialContext] = None,
                     constant: float = PRINTED_SIZE_CONSTANT) -> SizeRatio:
    """Exciton size over Debye length from the printed relation and directly.

    The direct value is <r>_n/lambda with <r>_n = 1.5 n^2 a_B. The two differ
    by a constant factor; both are reported.
    """
    ctx = ctx or plasma_params.ctx
    if int(n) != n or n < 1:
        raise InvalidParameter("n must be a positive integer")
    omega_ryd = ctx.coulomb_k_scaled**2 * 0.5 / n**3 / ctx.unit_scales["time"]
    ratio = plasma_params.omega_p / omega_ryd
    direct = 1.5 * n**2 * ctx.bohr_radius / plasma_params.debye_length
    return SizeRatio(printed=size_debye_ratio_from(plasma_params.gamma, ratio, constant),
                     direct=direct, gamma=plasma_params.gamma, frequency_ratio=ratio)


# ---------------------------------------------------------------------------
# accumulation
# ---------------------------------------------------------------------------
class BinAccumulator:
    """Per-bin sample sums inside a block, Welford statistics across blocks."""

    def __init__(self, n_bins: int):
        self.n_bins = int(n_bins)
        self.samples = np.zeros(self.n_bins, dtype=np.int64)
        self.flips = np.zeros(self.n_bins, dtype=np.int64)
        self.blocks = np.zeros(self.n_bins, dtype=np.int64)
        self.mean = np.zeros(self.n_bins)
        self.m2 = np.zeros(self.n_bins)
        self._sum = np.zeros(self.n_bins)
        self._cnt = np.zeros(self.n_bins, dtype=np.int64)

    def add(self, idx, values, flips=None):
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        values = np.atleast_1d(np.asarray(values, dtype=float))
        ok = (idx >= 0) & (idx < self.n_bins)
        np.add.at(self._sum, idx[ok], values[ok])
        np.add.at(self._cnt, idx[ok], 1)
        np.add.at(self.samples, idx[ok], 1)
        if flips is not None:
            np.add.at(self.flips, idx[ok], np.atleast_1d(flips)[ok].astype(np.int64))

    def close_block(self):
        hit = self._cnt > 0
        x = self._sum[hit] / self._cnt[hit]
        self.blocks[hit] += 1
        delta = x - self.mean[hit]
        self.mean[hit] += delta / self.blocks[hit]
        self.m2[hit] += delta * (x - self.mean[hit])
        self._sum[:] = 0.0
        self._cnt[:] = 0

    def merge(self, other: "BinAccumulator") -> "BinAccumulator":
        """Chan's pairwise combination; ``self`` is updated and returned."""
        na, nb = self.blocks.astype(float), other.blocks.astype(float)
        n = na + nb
        safe = np.where(n > 0, n, 1.0)
        delta = other.mean - self.mean
        self.mean = np.where(n > 0, self.mean + delta * nb / safe, 0.0)
        self.m2 = self.m2 + other.m2 + delta**2 * na * nb / safe
        self.blocks = self.blocks + other.blocks
        self.samples = self.samples + other.samples
        self.flips = self.flips + other.flips
        return self

    def stderr(self) -> np.ndarray:
        b = self.blocks.astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(b > 1, np.sqrt(self.m2 / np.maximum(b - 1, 1) / np.maximum(b, 1)),
                            np.nan)


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------
@dataclass
class ScreeningProfile:
    """Binned field ratio; lengths in metres, ``window`` in seconds."""

    edges: np.ndarray
    ratio: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    window: float
    reference: str
    reference_ratio: Optional[np.ndarray] = None
    debye_length: Optional[float] = None
    sign_flips: Optional[np.ndarray] = None
    empty_bins: list = field(default_factory=list)
    other_half: Optional["ScreeningProfile"] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.ratio = np.asarray(self.ratio, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.reference not in REFERENCES:
            raise InvalidParameter(f"reference must be one of {REFERENCES}")
        if len(self.edges) - 1 < MIN_BINS:
            raise InvalidParameter(f"a profile needs at least {MIN_BINS} bins")
        if np.any(np.diff(self.edges) <= 0):
            raise InvalidParameter("bin edges must increase")
        if not (len(self.ratio) == len(self.stderr) == len(self.counts) == len(self.edges) - 1):
            raise InvalidParameter("per-bin arrays must match the bin count")
        filled = self.counts > 0
        if not np.all(np.isfinite(self.ratio[filled])):
            raise InvalidParameter("non-finite ratio in a populated bin")
        self.empty_bins = [int(i) for i in np.flatnonzero(~filled)]
        if self.sign_flips is None:
            self.sign_flips = np.zeros(len(self.ratio), dtype=np.int64)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def n_bins(self) -> int:
        return len(self.ratio)

    def scaled_centers(self) -> np.ndarray:
        """Bin centres in Debye lengths (requires ``debye_length``)."""
        if not self.debye_length:
            raise InvalidParameter("profile has no Debye length attached")
        return self.centers / self.debye_length

    def write_csv(self, path):
        ref = self.reference_ratio if self.reference_ratio is not None else np.full(self.n_bins, np.nan)
        lam = self.debye_length or float("nan")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_center_m", "r_over_lambda", "ratio", "stderr", "n_samples",
                        "reference"])
            for c, r, s, n, f in zip(self.centers, self.ratio, self.stderr, self.counts, ref):
                w.writerow([f"{c:.6e}", f"{c / lam:.6g}", f"{r:.6g}", f"{s:.6g}", int(n),
                            f"{f:.6g}"])


def agreement_radius(profile: ScreeningProfile, tol: float = 0.1, start: float = 0.0) -> float:
    """Largest bin centre (in lambda) up to which every bin from ``start`` on is within ``tol``."""
    if profile.reference_ratio is None:
        raise InvalidParameter("profile carries no reference curve")
    x = profile.scaled_centers()
    rel = np.abs(profile.ratio / profile.reference_ratio - 1.0)
    reach = 0.0
    for xi, d in zip(x, rel):
        if xi < start:
            continue
        if not d <= tol:
            break
        reach = float(xi)
    return reach


def _make_profile(acc: BinAccumulator, edges_scaled, ctx, window_scaled, reference,
                  lam_scaled, ref_curve, meta) -> ScreeningProfile:
    ratio = np.where(acc.samples > 0, 1.0 + acc.mean, np.nan)
    err = acc.stderr()
    err = np.where(acc.samples > 0, err, np.nan)
    return ScreeningProfile(
        edges=ctx.to_si(np.asarray(edges_scaled, dtype=float), "length"), ratio=ratio,
        stderr=err, counts=acc.samples.copy(), window=float(ctx.to_si(window_scaled, "time")),
        reference=reference, reference_ratio=None if ref_curve is None else np.asarray(ref_curve),
        debye_length=None if lam_scaled is None else float(ctx.to_si(lam_scaled, "length")),
        sign_flips=acc.flips.copy(), meta=dict(meta))


@dataclass(frozen=True)
class RunSettings:
    """Shared numerics for the profile measurements (plasma periods and counts)."""

    n_particles: int = 128
    prerun_periods: float = 50.0
    window_periods: float = 10.0
    settle_periods: float = 2.0
    realizations: int = 1
    samples_per_period: int = 200
    block_periods: float = 1.0
    rtol: float = 1e-4

    def config(self) -> IntegratorConfig:
        return IntegratorConfig(rtol=self.rtol, atol=self.rtol)


def _realization_seeds(seed, count: int):
    return seed_sequence(seed).spawn(count)


def _run_window(sim: PlasmaSimulation, duration: float, dt: float, block: float,
                probe: Callable, acc: BinAccumulator):
    """Advance ``sim`` sampling ``probe(t, pos, charges)`` every ``dt``; blocks of ``block``."""
    n = int(round(duration / dt))
    per_block = max(1, int(round(block / dt)))
    t0 = sim.t
    st = sim.system.state
    for k in range(1, n + 1):
        sim.advance_to(t0 + k * dt)
        pos, _ = sim.system.unpack(sim.y)
        idx, val, flip = probe(sim.t, pos, st.charges)
        acc.add(idx, val, flip)
        if k % per_block == 0:
            acc.close_block()
    acc.close_block()


def _plasma_field(points, pos, charges, a2, kc):
    out = np.zeros((len(points), 3))
    if len(pos):
        kernels.fields_at(np.ascontiguousarray(points), pos, charges, a2, kc, out)
    return out


def debye_point_profile(params: PlasmaParams, seed, *, radii_over_lambda: Sequence[float] = None,
                        settings: RunSettings = RunSettings(), charge: float = 1.0
                        ) -> ScreeningProfile:
    """Screening of a fixed point charge at the trap centre.

    By symmetry the time-averaged radial field at radius r is kc Q(r)/r^2 with
    Q(r) the enclosed charge, so the ratio is the enclosed-charge fraction
    1 + sum_{|r_i| < r} q_i / q. Radii are bin centres.
    """
    ctx = params.ctx
    lam = ctx.to_scaled(params.debye_length, "length")
    tau = ctx.to_scaled(params.tau_p, "time")
    if radii_over_lambda is None:
        radii_over_lambda = np.linspace(0.25, 3.0, 12)
    x = np.asarray(radii_over_lambda, dtype=float)
    if len(x) < MIN_BINS or np.any(np.diff(x) <= 0) or x[0] <= 0:
        raise InvalidParameter(f"need >= {MIN_BINS} increasing positive radii")
    edges = _edges_around(x) * lam
    radii = x * lam
    cfg = settings.config()
    total = BinAccumulator(len(x))
    source = PointCharges([[0.0, 0.0, 0.0]], [charge])
    idx = np.arange(len(x))
    for child in _realization_seeds(seed, settings.realizations):
        state = init_plasma(settings.n_particles, params, np.random.default_rng(child))
        state, _ = equilibrate(state, params, settings.prerun_periods, cfg, source=source)
        sim = PlasmaSimulation(state, cfg, source=source)
        acc = BinAccumulator(len(x))

        def probe(t, pos, q):
            r = np.sqrt(np.sum(pos * pos, axis=1))
            enclosed = np.array([q[r < R].sum() for R in radii]) / charge
            return idx, enclosed, (1.0 + enclosed) < 0

        _run_window(sim, settings.window_periods * tau, tau / settings.samples_per_period,
                    settings.block_periods * tau, probe, acc)
        total.merge(acc)
    return _make_profile(total, edges, ctx, settings.window_periods * tau, "debye-point", lam,
                         debye_point_ratio(radii, lam),
                         {"n_particles": settings.n_particles, "realizations": settings.realizations,
                          "estimator": "enclosed charge"})


def _edges_around(x: np.ndarray) -> np.ndarray:
    mid = 0.5 * (x[1:] + x[:-1])
    lo = max(x[0] - (mid[0] - x[0]), 0.5 * x[0])
    hi = x[-1] + (x[-1] - mid[-1])
    return np.concatenate([[lo], mid, [hi]])


def orbit_screening_profile(orbit: OrbitPair, plasma_params: Optional[PlasmaParams], seed, *,
                            bins: int = 16, settings: RunSettings = RunSettings()
                            ) -> ScreeningProfile:
    """Field ratio at the hole of a prescribed orbit, binned in separation.

    Bins span [a(1 - xi), a(1 + xi)]. Each sample takes the plasma field at
    the hole projected on the hole-to-electron direction and divides it by
    the bare field kc/r_mid^2 of the bin the current separation falls in.
    Negative total projections are counted as sign flips.
    """
    if orbit.mode != "prescribed":
        raise InvalidParameter("screening profiles need a prescribed orbit")
    if bins < MIN_BINS:
        raise InvalidParameter(f"need at least {MIN_BINS} bins")
    ctx = orbit.ctx
    kc = ctx.coulomb_k_scaled
    lo, hi = orbit.separation_range()
    edges = np.linspace(lo, hi, bins + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    bare_mid = kc / mids**2
    source = prescribed_orbit_source(orbit)

    def locate(t):
        re, rh = orbit.positions(t)
        d = re - rh
        r = float(np.linalg.norm(d))
        i = min(max(int(np.searchsorted(edges, r, side="right")) - 1, 0), bins - 1)
        return rh, d / r, r, i

    if plasma_params is None:
        # no screening charges: sample the orbit only
        acc = BinAccumulator(bins)
        ts = np.linspace(0.0, 10 * orbit.period, 4000, endpoint=False)
        for t in ts:
            acc.add([locate(t)[3]], [0.0])
        acc.close_block()
        acc.m2[:] = 0.0
        prof = _make_profile(acc, edges, ctx, ts[-1], "bare", None, None,
                             {"density": 0.0})
        prof.stderr = np.where(prof.counts > 0, 0.0, np.nan)
        return prof

    lam = ctx.to_scaled(plasma_params.debye_length, "length")
    tau = ctx.to_scaled(plasma_params.tau_p, "time")
    cfg = settings.config()
    total = BinAccumulator(bins)
    for child in _realization_seeds(seed, settings.realizations):
        state = init_plasma(settings.n_particles, plasma_params, np.random.default_rng(child))
        state, _ = equilibrate(state, plasma_params, settings.prerun_periods, cfg, source=source)
        sim = PlasmaSimulation(state, cfg, source=source)
        a2 = state.soft_core**2
        acc = BinAccumulator(bins)

        def probe(t, pos, q):
            rh, u, r, i = locate(t)
            e = float(_plasma_field(rh[None, :], pos, q, a2, kc)[0] @ u)
            return [i], [e / bare_mid[i]], [kc / r**2 + e < 0]

        _run_window(sim, settings.window_periods * tau, tau / settings.samples_per_period,
                    settings.block_periods * tau, probe, acc)
        total.merge(acc)
    return _make_profile(total, edges, ctx, settings.window_periods * tau, "debye-point", lam,
                         debye_point_ratio(mids, lam),
                         {"n": orbit.n, "xi": orbit.xi, "omega_over_wp": orbit.omega * tau / (2 * math.pi),
                          "realizations": settings.realizations,
                          "n_particles": settings.n_particles})


def ring_fragment_profile(m_fragments: int, masses: str, separations_over_lambda: Sequence[float],
                          omega_over_wp: float, plasma_params: PlasmaParams, seed, *,
                          settings: RunSettings = RunSettings()) -> ScreeningProfile:
    """Electron and hole split into ``m_fragments`` charges rotating on their circles.

    ``masses`` is "equal" (both circles of radius r/2) or "material" (radii
    mu r/m_e and mu r/m_h). The field is taken at the first hole fragment and
    projected on the line through the centre towards the first electron
    fragment, which is diametrically opposite. Each separation is one bin and
    one run on a copy of the equilibrated plasma.
    """
    if m_fragments < 1:
        raise InvalidParameter("need at least one fragment")
    if omega_over_wp <= 0:
        raise InvalidParameter("rotation frequency must be positive")
    ctx = plasma_params.ctx
    kc = ctx.coulomb_k_scaled
    lam = ctx.to_scaled(plasma_params.debye_length, "length")
    tau = ctx.to_scaled(plasma_params.tau_p, "time")
    omega = omega_over_wp * 2.0 * math.pi / tau
    x = np.asarray(separations_over_lambda, dtype=float)
    if len(x) < MIN_BINS or np.any(np.diff(x) <= 0) or x[0] <= 0:
        raise InvalidParameter(f"need >= {MIN_BINS} increasing positive separations")
    if masses == "equal":
        f_e = f_h = 0.5
    elif masses == "material":
        f_e, f_h = ctx.mu / ctx.m_e_eff, ctx.mu / ctx.m_h_eff
    else:
        raise InvalidParameter("masses must be 'equal' or 'material'")
    seps = x * lam
    cfg = settings.config()
    total = BinAccumulator(len(x))
    for child in _realization_seeds(seed, settings.realizations):
        state = init_plasma(settings.n_particles, plasma_params, np.random.default_rng(child))
        state, _ = equilibrate(state, plasma_params, settings.prerun_periods, cfg)
        acc = BinAccumulator(len(x))
        a2 = state.soft_core**2
        for i, r in enumerate(seps):
            src = RingFragments([(f_e * r, -1.0, 0.0), (f_h * r, 1.0, math.pi)], m_fragments, omega)
            sim = PlasmaSimulation(state.copy(), cfg, source=src)
            sim.run(settings.settle_periods * tau)

            def probe(t, pos, q, i=i, r=r):
                ang = omega * t + math.pi
                rh = np.array([f_h * r * math.cos(ang), f_h * r * math.sin(ang), 0.0])
                u = -np.array([math.cos(ang), math.sin(ang), 0.0])
                e = float(_plasma_field(rh[None, :], pos, q, a2, kc)[0] @ u)
                return [i], [e * r * r / kc], [kc / r**2 + e < 0]

            _run_window(sim, settings.window_periods * tau, tau / settings.samples_per_period,
                        settings.block_periods * tau, probe, acc)
        total.merge(acc)
    return _make_profile(total, _edges_around(x) * lam, ctx, settings.window_periods * tau,
                         "debye-point", lam, debye_point_ratio(seps, lam),
                         {"m_fragments": m_fragments, "masses": masses,
                          "omega_over_wp": omega_over_wp, "realizations": settings.realizations,
                          "n_particles": settings.n_particles})


def circular_orbit_profile(masses: str, separations_over_lambda: Sequence[float],
                           omega_over_wp: float, plasma_params: PlasmaParams, seed, *,
                           settings: RunSettings = RunSettings()) -> ScreeningProfile:
    """Two opposite point charges on circles; the single-fragment ring profile."""
    return ring_fragment_profile(1, masses, separations_over_lambda, omega_over_wp,
                                 plasma_params, seed, settings=settings)


def oscillating_dipole_profile(amplitude_over_lambda: float, omega_over_wp: float,
                               plasma_params: PlasmaParams, seed, *,
                               radii_over_lambda: Sequence[float] = None,
                               samples_per_cycle: int = 40,
                               settings: RunSettings = RunSettings()) -> ScreeningProfile:
    """Fixed point dipole p(t) = p0 sin(omega t) z at the origin.

    The field is probed on the z axis at +-r. Each half period of the
    oscillation is averaged separately; the returned profile is the positive
    half and ``other_half`` the negative one. The ratio is the half-period
    mean total field over the half-period mean bare field.
    """
    if omega_over_wp <= 0:
        raise InvalidParameter("dipole frequency must be positive")
    if samples_per_cycle < 4 or samples_per_cycle % 2:
        raise InvalidParameter("samples_per_cycle must be even and >= 4")
    ctx = plasma_params.ctx
    kc = ctx.coulomb_k_scaled
    lam = ctx.to_scaled(plasma_params.debye_length, "length")
    tau = ctx.to_scaled(plasma_params.tau_p, "time")
    omega = omega_over_wp * 2.0 * math.pi / tau
    period = 2.0 * math.pi / omega
    p0 = amplitude_over_lambda * lam
    if radii_over_lambda is None:
        radii_over_lambda = np.linspace(0.3, 1.5, 9)
    x = np.asarray(radii_over_lambda, dtype=float)
    if len(x) < MIN_BINS or np.any(np.diff(x) <= 0) or x[0] <= 0:
        raise InvalidParameter(f"need >= {MIN_BINS} increasing positive radii")
    radii = x * lam
    pts = np.concatenate([np.column_stack([0 * radii, 0 * radii, radii]),
                          np.column_stack([0 * radii, 0 * radii, -radii])])
    source = OscillatingDipoles([[0.0, 0.0, 0.0]], [[0.0, 0.0, p0]], omega, phase=-0.5 * math.pi)
    cfg = settings.config()
    half = samples_per_cycle // 2
    phases = (np.arange(samples_per_cycle) + 0.5) * 2.0 * math.pi / samples_per_cycle
    # bare half-period means at the sampled phases
    unit_field = None
    cycles_per_block = max(1, int(math.ceil(settings.block_periods * tau / period)))
    n_cycles = max(1, int(round(settings.window_periods * tau / period)))
    accs = [BinAccumulator(len(x)), BinAccumulator(len(x))]
    for child in _realization_seeds(seed, settings.realizations):
        state = init_plasma(settings.n_particles, plasma_params, np.random.default_rng(child))
        state, _ = equilibrate(state, plasma_params, settings.prerun_periods, cfg, source=source)
        a2 = state.soft_core**2
        if unit_field is None:
            unit_field = dipole_field(pts, [[0.0, 0.0, 0.0]], [[0.0, 0.0, 1.0]],
                                      state.soft_core, kc)[:, 2]
            bare = [p0 * np.mean(np.sin(phases[:half])) * unit_field,
                    p0 * np.mean(np.sin(phases[half:])) * unit_field]
        sim = PlasmaSimulation(state, cfg, source=source)
        # start on a cycle boundary
        sim.advance_to(math.ceil(sim.t / period) * period)
        local = [BinAccumulator(len(x)), BinAccumulator(len(x))]
        dt = period / samples_per_cycle
        st = sim.system.state
        idx = np.concatenate([np.arange(len(x)), np.arange(len(x))])
        for c in range(n_cycles):
            t_start = sim.t
            sums = [np.zeros(len(pts)), np.zeros(len(pts))]
            for j in range(samples_per_cycle):
                sim.advance_to(t_start + (j + 0.5) * dt)
                pos, _ = sim.system.unpack(sim.y)
                sums[j // half] += _plasma_field(pts, pos, st.charges, a2, kc)[:, 2]
            sim.advance_to(t_start + period)
            for h in range(2):
                val = sums[h] / half / bare[h]
                local[h].add(idx, val, (val + 1.0) < 0)
            if (c + 1) % cycles_per_block == 0:
                for h in range(2):
                    local[h].close_block()
        for h in range(2):
            local[h].close_block()
            accs[h].merge(local[h])
    ref = dipole_axis_ratio(radii, lam, 0.0)
    window = n_cycles * period
    meta = {"amplitude_over_lambda": amplitude_over_lambda, "omega_over_wp": omega_over_wp,
            "realizations": settings.realizations, "n_particles": settings.n_particles}
    edges = _edges_around(x) * lam
    first = _make_profile(accs[0], edges, ctx, window, "debye-dipole", lam, ref,
                          dict(meta, half="positive"))
    first.other_half = _make_profile(accs[1], edges, ctx, window, "debye-dipole", lam, ref,
                                     dict(meta, half="negative"))
    return first


def half_periods_consistent(profile: ScreeningProfile, nsigma: float = 3.0) -> bool:
    """Whether the two half-period profiles agree bin by bin within ``nsigma``."""
    other = profile.other_half
    if other is None:
        raise InvalidParameter("profile has no second half")
    err = np.hypot(profile.stderr, other.stderr)
    return bool(np.all(np.abs(profile.ratio - other.ratio) <= nsigma * err))


def mean_screening(profile: ScreeningProfile) -> tuple[float, float]:
    """Error-weighted mean of 1 - ratio over populated bins, with its error."""
    ok = (profile.counts > 0) & np.isfinite(profile.stderr) & (profile.stderr > 0)
    if not ok.any():
        return float(np.mean(1.0 - profile.ratio[profile.counts > 0])), 0.0
    w = 1.0 / profile.stderr[ok] ** 2
    m = float(np.sum(w * (1.0 - profile.ratio[ok])) / w.sum())
    return m, float(1.0 / math.sqrt(w.sum()))


__all__ = [
    "PRINTED_SIZE_CONSTANT", "debye_point_ratio", "debye_dipole_potential", "debye_dipole_field",
    "dipole_axis_ratio", "SizeRatio", "size_debye_ratio", "size_debye_ratio_from",
    "BinAccumulator", "ScreeningProfile", "RunSettings", "agreement_radius",
    "debye_point_profile", "orbit_screening_profile", "ring_fragment_profile",
    "circular_orbit_profile", "oscillating_dipole_profile", "half_periods_consistent",
    "mean_screening",
]
