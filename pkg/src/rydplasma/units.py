"""Physical constants, the Cu2O material context and closed-form plasma/Rydberg scales.

All functions here take and return SI values. Simulations run in excitonic
scaled units (length a_B, energy Ry, time hbar/Ry, charge e); the conversion
factors live on :class:`MaterialContext`. In those units the reduced mass is
1/2 and the Coulomb constant for two unit charges is 2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import constants as _c

M0 = _c.m_e
E_CHARGE = _c.e
EPS0 = _c.epsilon_0
HBAR = _c.hbar
KB = _c.k

GAMMA_WEAK_LIMIT = 0.2


class InvalidParameter(ValueError):
    """Raised when a physical input is outside its domain."""


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0.0 or not math.isfinite(value):
        raise InvalidParameter(f"{name} must be positive and finite, got {value!r}")
    return value


def reduced_mass(m_e: float, m_h: float) -> float:
    """Reduced mass m_e*m_h/(m_e+m_h), in the units of the inputs."""
    m_e = _positive("m_e", m_e)
    m_h = _positive("m_h", m_h)
    return m_e * m_h / (m_e + m_h)


@dataclass(frozen=True)
class MaterialContext:
    """Effective masses (units of m0) and relative permittivity of the host crystal."""

    m_e_eff: float = 0.985
    m_h_eff: float = 0.575
    epsilon_rel: float = 7.5

    def __post_init__(self):
        _positive("m_e_eff", self.m_e_eff)
        _positive("m_h_eff", self.m_h_eff)
        _positive("epsilon_rel", self.epsilon_rel)

    @classmethod
    def from_mapping(cls, cfg: Optional[dict]) -> "MaterialContext":
        """Build from a ``material`` config table (keys m_e_eff, m_h_eff, epsilon_rel)."""
        cfg = dict(cfg or {})
        unknown = set(cfg) - {"m_e_eff", "m_h_eff", "epsilon_rel"}
        if unknown:
            raise InvalidParameter(f"unknown material keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in cfg.items()})

    # -- derived SI quantities -------------------------------------------------
    @property
    def mu(self) -> float:
        """Reduced mass in units of m0."""
        return reduced_mass(self.m_e_eff, self.m_h_eff)

    @property
    def epsilon(self) -> float:
        return self.epsilon_rel * EPS0

    @property
    def coulomb_k(self) -> float:
        """1/(4 pi eps) in SI."""
        return 1.0 / (4.0 * math.pi * self.epsilon)

    @property
    def bohr_radius(self) -> float:
        return 4.0 * math.pi * self.epsilon * HBAR**2 / (self.mu * M0 * E_CHARGE**2)

    @property
    def rydberg_energy(self) -> float:
        return self.mu * M0 * E_CHARGE**4 / (2.0 * (4.0 * math.pi * self.epsilon) ** 2 * HBAR**2)

    @property
    def rydberg_time(self) -> float:
        """Scaled time unit hbar/Ry in seconds."""
        return HBAR / self.rydberg_energy

    # -- scaled units ------------------------------------------------------------
    @property
    def unit_scales(self) -> dict:
        """SI value of one scaled unit, per physical dimension."""
        length = self.bohr_radius
        energy = self.rydberg_energy
        time = self.rydberg_time
        mass = energy * time**2 / length**2
        return {
            "length": length,
            "energy": energy,
            "time": time,
            "mass": mass,
            "charge": E_CHARGE,
            "velocity": length / time,
            "momentum": mass * length / time,
            "frequency": 1.0 / time,
            "density": length**-3,
            "force": energy / length,
            "field": energy / (length * E_CHARGE),
            "temperature": energy / KB,
            "action": energy * time,
        }

    def to_scaled(self, value, kind: str):
        try:
            return value / self.unit_scales[kind]
        except KeyError:
            raise InvalidParameter(f"unknown dimension {kind!r}") from None

    def to_si(self, value, kind: str):
        try:
            return value * self.unit_scales[kind]
        except KeyError:
            raise InvalidParameter(f"unknown dimension {kind!r}") from None

    def mass_scaled(self, m_in_m0: float) -> float:
        """Mass given in units of m0 expressed in scaled mass units (2 mu = 1)."""
        return m_in_m0 * M0 / self.unit_scales["mass"]

    @property
    def coulomb_k_scaled(self) -> float:
        """Coulomb constant for unit charges in scaled units (exactly 2)."""
        return self.coulomb_k * E_CHARGE**2 / (self.rydberg_energy * self.bohr_radius)


DEFAULT_CONTEXT = MaterialContext()


def wigner_seitz_radius(rho: float) -> float:
    rho = _positive("rho", rho)
    return (3.0 / (4.0 * math.pi * rho)) ** (1.0 / 3.0)


def plasma_frequency(rho: float, ctx: MaterialContext = DEFAULT_CONTEXT) -> float:
    """Two-species plasma frequency sqrt(rho e^2 / (2 mu eps)) in rad/s."""
    rho = _positive("rho", rho)
    return math.sqrt(rho * E_CHARGE**2 / (2.0 * ctx.mu * M0 * ctx.epsilon))


def debye_length(rho: float, T: float, ctx: MaterialContext = DEFAULT_CONTEXT) -> float:
    """Debye length sqrt(eps kB T / (rho e^2)) in metres; rho is the total density."""
    rho = _positive("rho", rho)
    T = _positive("T", T)
    return math.sqrt(ctx.epsilon * KB * T / (rho * E_CHARGE**2))


def coupling_constant(rho: float, T: float, ctx: MaterialContext = DEFAULT_CONTEXT) -> float:
    """Coulomb coupling e^2/(4 pi eps a_ws kB T)."""
    T = _positive("T", T)
    return ctx.coulomb_k * E_CHARGE**2 / (wigner_seitz_radius(rho) * KB * T)


def temperature_from_coupling(rho: float, gamma: float,
                              ctx: MaterialContext = DEFAULT_CONTEXT) -> float:
    gamma = _positive("gamma", gamma)
    return ctx.coulomb_k * E_CHARGE**2 / (wigner_seitz_radius(rho) * KB * gamma)


@dataclass(frozen=True)
class PlasmaParams:
    """Density (m^-3, both species) and temperature of a neutral e-h plasma.

    Give exactly one of ``temperature`` and ``gamma``. Per-species
    temperatures may be set with ``temperature_e``/``temperature_h``; the
    common ``temperature`` is then their mean.
    """

    density: float
    temperature: Optional[float] = None
    gamma: Optional[float] = None
    temperature_e: Optional[float] = None
    temperature_h: Optional[float] = None
    ctx: MaterialContext = field(default=DEFAULT_CONTEXT, repr=False)

    def __post_init__(self):
        _positive("density", self.density)
        species = (self.temperature_e, self.temperature_h)
        if any(t is not None for t in species):
            if None in species or self.temperature is not None or self.gamma is not None:
                raise InvalidParameter("per-species temperatures must both be given, alone")
            t_e = _positive("temperature_e", self.temperature_e)
            t_h = _positive("temperature_h", self.temperature_h)
            object.__setattr__(self, "temperature", 0.5 * (t_e + t_h))
        elif (self.temperature is None) == (self.gamma is None):
            raise InvalidParameter("give exactly one of temperature and gamma")
        if self.gamma is None:
            object.__setattr__(self, "gamma", coupling_constant(self.density, self.temperature, self.ctx))
        else:
            object.__setattr__(self, "temperature",
                               temperature_from_coupling(self.density, self.gamma, self.ctx))
        if self.temperature_e is None:
            object.__setattr__(self, "temperature_e", self.temperature)
            object.__setattr__(self, "temperature_h", self.temperature)
        if self.gamma > GAMMA_WEAK_LIMIT * (1 + 1e-9):
            warnings.warn(f"coupling constant {self.gamma:.3g} exceeds the weak-coupling "
                          f"limit {GAMMA_WEAK_LIMIT}", stacklevel=2)

    @property
    def omega_p(self) -> float:
        return plasma_frequency(self.density, self.ctx)

    @property
    def tau_p(self) -> float:
        return 2.0 * math.pi / self.omega_p

    @property
    def a_ws(self) -> float:
        return wigner_seitz_radius(self.density)

    @property
    def debye_length(self) -> float:
        # each species carries half the density
        inv = 0.5 * self.density * E_CHARGE**2 / (self.ctx.epsilon * KB) * (
            1.0 / self.temperature_e + 1.0 / self.temperature_h)
        return 1.0 / math.sqrt(inv)

    @property
    def soft_core(self) -> float:
        return 0.02 * self.a_ws

    def with_density(self, rho: float) -> "PlasmaParams":
        return PlasmaParams(rho, temperature=self.temperature, ctx=self.ctx)


@dataclass(frozen=True)
class RydbergScales:
    n: int
    energy: float
    semi_major_axis: float
    omega_ryd: float
    t_ryd: float
    r_exp: float
    n_osc: int
    oscillator_mass: float


def oscillator_index(n: int, ctx: MaterialContext = DEFAULT_CONTEXT,
                     oscillator_mass: str = "electron") -> tuple[int, float]:
    """Oscillator level whose orbit matches <r>_n, and the oscillator mass in m0.

    ``oscillator_mass`` selects m_e_eff ("electron", as printed) or the
    reduced mass ("reduced").
    """
    if oscillator_mass == "electron":
        m = ctx.m_e_eff
    elif oscillator_mass == "reduced":
        m = ctx.mu
    else:
        raise InvalidParameter(f"oscillator_mass must be 'electron' or 'reduced', not {oscillator_mass!r}")
    omega = ctx.coulomb_k**2 * ctx.mu * M0 * E_CHARGE**4 / HBAR**3 / n**3
    r_exp = 1.5 * n**2 * ctx.bohr_radius
    width2 = HBAR / (m * M0 * omega)
    return max(0, int(round(r_exp**2 / width2 - 0.5))), m


def rydberg_scales(n: int, ctx: MaterialContext = DEFAULT_CONTEXT,
                   oscillator_mass: str = "electron") -> RydbergScales:
    if int(n) != n or n < 1:
        raise InvalidParameter(f"principal quantum number must be an integer >= 1, got {n!r}")
    n = int(n)
    omega = ctx.coulomb_k**2 * ctx.mu * M0 * E_CHARGE**4 / HBAR**3 / n**3
    n_osc, m = oscillator_index(n, ctx, oscillator_mass)
    return RydbergScales(
        n=n,
        energy=-ctx.rydberg_energy / n**2,
        semi_major_axis=n**2 * ctx.bohr_radius,
        omega_ryd=omega,
        t_ryd=2.0 * math.pi / omega,
        r_exp=1.5 * n**2 * ctx.bohr_radius,
        n_osc=n_osc,
        oscillator_mass=m,
    )


def seed_sequence(seed) -> np.random.SeedSequence:
    """Accept an int, None or an existing SeedSequence (returned unchanged)."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)
