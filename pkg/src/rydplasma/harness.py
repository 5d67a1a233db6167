"""Experiment orchestration: configs, seeded scheduling, result tables and plots.

A run is fully determined by its configuration mapping and master seed.
Every independent work unit gets a child of ``numpy.random.SeedSequence``
chosen by its position in the task list, so results do not depend on the
worker count. Physical inputs are SI (m^-3, K); frequencies are given as
ratios to omega_p and lengths as multiples of the Debye length.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import re
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .coupled import coupled_transfer, screened_coupling_ratio, vacuum_transfer_time
from .fitting import PowerLawFit, fit_power_law, vertical_cut
from .integrator import IntegrationFailure, IntegratorConfig
from .kepler import classical_lifetime_mc, init_kepler, precess
from .screening import (RunSettings, agreement_radius, debye_point_profile,
                        half_periods_consistent, oscillating_dipole_profile,
                        orbit_screening_profile, ring_fragment_profile)
from .toymodel import NormDriftError, ToyConfig, se_evolve, sup_difference, twa_toy
from .twa import (OscillatorSpec, critical_density, critical_density_at, fit_lifetime,
                  record_drive, window_exact, window_trace)
from .units import (DEFAULT_CONTEXT, E_CHARGE, GAMMA_WEAK_LIMIT, KB, InvalidParameter,
                    MaterialContext, PlasmaParams, coupling_constant, rydberg_scales,
                    seed_sequence)

EXPERIMENTS = (
    "debye-check", "lifetime-scan", "classical-lifetime", "screening-ellipse",
    "screening-circular", "ring-fragments", "regime-diagram", "coupled-transfer",
    "dipole-screening", "toy-benchmark",
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 2, 3, 4


class ConfigError(InvalidParameter):
    """Malformed or inconsistent run configuration."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
_SECTIONS = ("experiment", "material", "plasma", "exciton", "ensemble", "run", "output")

# desk-scale defaults per experiment; a config file overrides any key
DEFAULTS = {
    "debye-check": {
        "plasma": {"densities": [0.5e17], "gamma": 0.1},
        "run": {"n_particles": [128, 256, 512], "prerun_periods": 20, "window_periods": 10,
                "radii_over_lambda": [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0],
                "rtol": 1e-4},
    },
    "lifetime-scan": {
        "plasma": {"densities": [1e18, 3e18, 1e19, 3e19, 1e20], "temperatures": [40.0]},
        "exciton": {"n": [4, 6, 8]},
        "ensemble": {"n_traj": 100_000, "realizations": 2},
        "run": {"n_particles": 128, "prerun_periods": 10, "duration_periods": 30,
                "samples_per_period": 2000, "samples_per_ryd": 10, "windows": 40,
                "points": 150, "rtol": 1e-5,
                "cut_density": 1e19, "reference_density": 1.07e19},
    },
    "classical-lifetime": {
        "plasma": {"densities": [1e19], "temperatures": [40.0]},
        "exciton": {"n": [6], "l": 3},
        "ensemble": {"n_traj": 8},
        "run": {"n_particles": 64, "prerun_periods": 5, "cap_periods": 50, "rtol": 1e-7},
    },
    "screening-ellipse": {
        "plasma": {"densities": [6.25e16], "temperatures": [7.0]},
        "exciton": {"n": [20], "xi": 0.95, "omega_prec": 0.2},
        "run": {"frequency_scales": [1.0, 10.0], "bins": 16, "n_particles": 128,
                "prerun_periods": 20, "window_periods": 60, "rtol": 1e-4},
    },
    "screening-circular": {
        "plasma": {"densities": [6.25e16], "gamma": 0.2},
        "run": {"masses": "equal", "omega_over_wp": [0.1, 100.0],
                "separations_over_lambda": [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0],
                "n_particles": 128, "prerun_periods": 20, "window_periods": 20,
                "settle_periods": 2, "rtol": 1e-4},
    },
    "ring-fragments": {
        "plasma": {"densities": [6.25e16], "gamma": 0.2},
        "run": {"masses": "material", "fragments": [1, 16], "omega_over_wp": 10.0,
                "separations_over_lambda": [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0],
                "n_particles": 128, "prerun_periods": 20, "window_periods": 10,
                "settle_periods": 2, "rtol": 1e-4},
    },
    "regime-diagram": {
        "plasma": {"temperatures": list(np.geomspace(1.0, 100.0, 21))},
        "exciton": {"n": [20]},
        "run": {"reference_density": 6.25e16, "reference_temperature": 7.0,
                "size_over_lambda": 0.5},
    },
    "coupled-transfer": {
        "plasma": {"densities": [0.5e17], "gamma": 0.2},
        "exciton": {"n": [10]},
        "ensemble": {"n_traj": 16},
        "run": {"separation_over_lambda": 0.8, "n_particles": 64, "prerun_periods": 10,
                "n_out": 200, "vacuum_trajectories": 2000, "rtol": 1e-5},
    },
    "dipole-screening": {
        "plasma": {"densities": [6.25e16], "gamma": 0.2},
        "run": {"omega_over_wp": [0.2 * math.sqrt(2.0), 5.0 * math.sqrt(2.0)],
                "amplitude_over_lambda": 0.2,
                "radii_over_lambda": [0.3, 0.45, 0.6, 0.75, 0.9, 1.05, 1.2, 1.35, 1.5],
                "n_particles": 128, "prerun_periods": 20, "window_periods": 40, "rtol": 1e-4},
    },
    "toy-benchmark": {
        "exciton": {"n": [6]},
        "ensemble": {"n_traj": 400_000},
        "run": {"grid": [128, 128], "periods": 3.5, "packet_width_dh": 2.0, "dt_safety": 0.25},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


_NUMBER = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")


def _numbers(x):
    """Read numeric strings such as '1.0e18' (a string under YAML 1.1) as floats."""
    if isinstance(x, dict):
        return {k: _numbers(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_numbers(v) for v in x]
    if isinstance(x, str) and _NUMBER.fullmatch(x.strip()):
        return float(x)
    return x


def _plain(x):
    """JSON-friendly copy (numpy scalars and tuples converted)."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


@dataclass
class ExperimentConfig:
    """Validated run configuration (SI inputs)."""

    experiment: str
    material: dict = field(default_factory=dict)
    plasma: dict = field(default_factory=dict)
    exciton: dict = field(default_factory=dict)
    ensemble: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a mapping")
        unknown = set(raw) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        exp = raw.get("experiment")
        if isinstance(exp, dict):
            exp = exp.get("id")
        if exp not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment id {exp!r}; choose from {', '.join(EXPERIMENTS)}")
        merged = _merge(DEFAULTS[exp], {k: v for k, v in raw.items() if k != "experiment"})
        for k in _SECTIONS[1:]:
            if not isinstance(merged.get(k, {}), dict):
                raise ConfigError(f"section {k!r} must be a mapping")
        cfg = cls(experiment=exp, **{k: _plain(merged.get(k, {})) for k in _SECTIONS[1:]})
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        import yaml

        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_mapping(_numbers(raw) if isinstance(raw, dict) else raw)

    def validate(self):
        try:
            self.ctx
        except InvalidParameter as exc:
            raise ConfigError(str(exc)) from exc
        for key in ("densities", "temperatures"):
            vals = self.plasma.get(key)
            if vals is not None and (not isinstance(vals, list) or
                                     any(not isinstance(v, (int, float)) or v <= 0 for v in vals)):
                raise ConfigError(f"plasma.{key} must be a list of positive numbers")
        if "gamma" in self.plasma and "temperatures" in self.plasma:
            raise ConfigError("give plasma.gamma or plasma.temperatures, not both")
        n = self.exciton.get("n")
        if n is not None and (not isinstance(n, list) or any(int(v) != v or v < 1 for v in n)):
            raise ConfigError("exciton.n must be a list of positive integers")
        for key in ("n_traj", "workers", "realizations"):
            v = self.ensemble.get(key)
            if v is not None and (int(v) != v or v < 1):
                raise ConfigError(f"ensemble.{key} must be a positive integer")

    # -- derived ---------------------------------------------------------------
    @property
    def ctx(self) -> MaterialContext:
        return MaterialContext.from_mapping(self.material)

    @property
    def seed(self) -> int:
        return int(self.ensemble.get("seed", 0))

    @property
    def workers(self) -> int:
        return int(self.ensemble.get("workers", 1))

    def plasma_points(self) -> list[PlasmaParams]:
        """Cartesian grid of (density, temperature) or (density, gamma) points."""
        dens = self.plasma.get("densities")
        if not dens:
            raise ConfigError("plasma.densities is required for this experiment")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                if "gamma" in self.plasma:
                    return [PlasmaParams(float(r), gamma=float(self.plasma["gamma"]), ctx=self.ctx)
                            for r in dens]
                temps = self.plasma.get("temperatures")
                if not temps:
                    raise ConfigError("give plasma.temperatures or plasma.gamma")
                return [PlasmaParams(float(r), temperature=float(T), ctx=self.ctx)
                        for T in temps for r in dens]
            except InvalidParameter as exc:
                raise ConfigError(str(exc)) from exc

    def as_dict(self) -> dict:
        return {"experiment": self.experiment, "material": self.material, "plasma": self.plasma,
                "exciton": self.exciton, "ensemble": self.ensemble, "run": self.run}

    def digest(self) -> str:
        blob = json.dumps(_plain(self.as_dict()), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, *, seed=None, n_traj=None, workers=None) -> "ExperimentConfig":
        ens = dict(self.ensemble)
        if seed is not None:
            ens["seed"] = int(seed)
        if n_traj is not None:
            ens["n_traj"] = int(n_traj)
        if workers is not None:
            ens["workers"] = int(workers)
        out = copy.deepcopy(self)
        out.ensemble = ens
        out.validate()
        return out


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------
EXACT = "exact"


@dataclass
class FitRecord:
    name: str
    exponent: float
    prefactor: float
    stderr: float
    window: tuple
    residuals: tuple

    @classmethod
    def of(cls, name: str, fit: PowerLawFit) -> "FitRecord":
        return cls(name, fit.exponent, fit.prefactor, fit.stderr, tuple(fit.window),
                   tuple(fit.residuals))

    def as_dict(self) -> dict:
        return {"name": self.name, "exponent": self.exponent, "prefactor": self.prefactor,
                "stderr": self.stderr, "window": list(self.window),
                "residuals": list(self.residuals)}


@dataclass
class ResultTable:
    """Rows of inputs and measured outputs; every output has an error column.

    Outputs are given as (value, error) pairs; ``None`` as error marks an
    exact value and is written as ``exact``.
    """

    inputs: list
    outputs: list
    rows: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, inputs: dict, outputs: dict):
        if set(inputs) != set(self.inputs) or set(outputs) != set(self.outputs):
            raise InvalidParameter("row keys do not match the table columns")
        for k, v in outputs.items():
            if not (isinstance(v, tuple) and len(v) == 2):
                raise InvalidParameter(f"output {k!r} must be a (value, error) pair")
        self.rows.append((dict(inputs), dict(outputs)))

    @property
    def columns(self) -> list[str]:
        cols = list(self.inputs)
        for k in self.outputs:
            cols += [k, k + "_err"]
        return cols

    def column(self, name: str) -> np.ndarray:
        if name in self.inputs:
            return np.array([r[0][name] for r in self.rows])
        if name in self.outputs:
            return np.array([r[1][name][0] for r in self.rows], dtype=float)
        if name.endswith("_err") and name[:-4] in self.outputs:
            return np.array([np.nan if r[1][name[:-4]][1] is None else r[1][name[:-4]][1]
                             for r in self.rows], dtype=float)
        raise KeyError(name)

    @staticmethod
    def _fmt(v) -> str:
        if v is None:
            return EXACT
        if isinstance(v, (bool, np.bool_)):
            return "true" if v else "false"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return f"{float(v):.9g}"
        return str(v)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# rydplasma result table\n")
        for k in sorted(self.provenance):
            buf.write(f"# {k}: {self.provenance[k]}\n")
        for f in self.fits:
            buf.write(f"# fit {f.name}: exponent={f.exponent:.6g} +- {f.stderr:.3g} "
                      f"prefactor={f.prefactor:.6g} window=[{f.window[0]:.6g}, {f.window[1]:.6g}] "
                      f"residuals=[{', '.join(f'{r:.3g}' for r in f.residuals)}]\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for inp, out in self.rows:
            row = [self._fmt(inp[k]) for k in self.inputs]
            for k in self.outputs:
                row += [self._fmt(out[k][0]), self._fmt(out[k][1])]
            w.writerow(row)
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


@dataclass
class Check:
    name: str
    passed: bool
    value: object
    target: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.value} (target {self.target})"


@dataclass
class Outcome:
    """What a runner hands back: the table, acceptance checks, plot closures."""

    table: ResultTable
    checks: list = field(default_factory=list)
    plots: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)


@dataclass
class RunResult:
    config: ExperimentConfig
    outcome: Outcome
    out_dir: Optional[Path]
    wall_time: float
    exit_code: int

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.outcome.checks)


# ---------------------------------------------------------------------------
# scheduling
# ---------------------------------------------------------------------------
def task_seeds(seed: int, count: int) -> list:
    """Counter-indexed child streams; task i always gets the same stream."""
    return seed_sequence(seed).spawn(count)


def _guarded(fn, arg):
    try:
        return True, fn(arg)
    except (IntegrationFailure, NormDriftError, FloatingPointError, InvalidParameter) as exc:
        return False, f"{type(exc).__name__}: {exc}"
    except Exception as exc:  # worker crash: keep the others, report it
        return False, "".join(traceback.format_exception_only(type(exc), exc)).strip()


def run_tasks(fn: Callable, args: Sequence, workers: int = 1):
    """Apply ``fn`` to each argument; results come back in argument order.

    Returns (results, failures) where failed slots hold None and failures
    lists (index, message).
    """
    args = list(args)
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_guarded, [fn] * len(args), args))
    else:
        done = [_guarded(fn, a) for a in args]
    results, failures = [], []
    for i, (ok, val) in enumerate(done):
        results.append(val if ok else None)
        if not ok:
            failures.append((i, val))
    return results, failures


def _settings(run: dict, **extra) -> RunSettings:
    keys = ("n_particles", "prerun_periods", "window_periods", "settle_periods", "realizations",
            "samples_per_period", "block_periods", "rtol")
    kw = {k: run[k] for k in keys if k in run and not isinstance(run[k], list)}
    kw.update(extra)
    return RunSettings(**kw)


def _si(ctx, value, kind):
    return float(ctx.to_si(value, kind))


# ---------------------------------------------------------------------------
# debye-check
# ---------------------------------------------------------------------------
def _debye_task(a):
    params, n, seed, radii, settings = a
    return debye_point_profile(params, seed, radii_over_lambda=radii,
                               settings=_replace(settings, n_particles=n))


def _replace(settings: RunSettings, **kw) -> RunSettings:
    from dataclasses import replace

    return replace(settings, **kw)


def debye_check(cfg: ExperimentConfig) -> Outcome:
    params = cfg.plasma_points()[0]
    run = cfg.run
    ns = [int(n) for n in run["n_particles"]]
    radii = np.asarray(run["radii_over_lambda"], dtype=float)
    settings = _settings(run)
    seeds = task_seeds(cfg.seed, len(ns))
    profiles, fails = run_tasks(_debye_task, [(params, n, s, radii, settings)
                                              for n, s in zip(ns, seeds)], cfg.workers)
    table = ResultTable(["n_particles", "r_over_lambda"], ["ratio", "debye"])
    radius = {}
    for n, prof in zip(ns, profiles):
        if prof is None:
            continue
        for x, r, e, ref in zip(prof.scaled_centers(), prof.ratio, prof.stderr,
                                prof.reference_ratio):
            table.add({"n_particles": n, "r_over_lambda": float(x)},
                      {"ratio": (float(r), float(e)), "debye": (float(ref), None)})
        radius[n] = agreement_radius(prof, 0.1, start=0.5)
    checks = []
    if profiles and profiles[-1] is not None:
        prof = profiles[-1]
        x = prof.scaled_centers()
        sel = (x >= 0.5 - 1e-9) & (x <= 2.0 + 1e-9)
        dev = np.abs(prof.ratio[sel] / prof.reference_ratio[sel] - 1.0)
        checks.append(Check(f"debye profile N={ns[-1]} within 10% on [0.5, 2] lambda",
                            bool(np.all(dev <= 0.1)), f"max dev {dev.max():.3f}", "<= 0.10"))
    if len(radius) == len(ns) >= 2:
        rs = [radius[n] for n in ns]
        checks.append(Check("agreement radius grows with N", bool(np.all(np.diff(rs) > 0)),
                            ", ".join(f"{n}:{r:.2f}" for n, r in zip(ns, rs)), "increasing"))

    def plot(ax):
        for n, prof in zip(ns, profiles):
            if prof is not None:
                ax.errorbar(prof.scaled_centers(), prof.ratio, prof.stderr, fmt="o-", ms=3,
                            label=f"N={n}")
        xx = np.linspace(0.05, radii.max() * 1.05, 200)
        ax.plot(xx, np.exp(-xx) * (1 + xx), "k--", label="Debye")
        ax.set_xlabel("r / lambda")
        ax.set_ylabel("E / E_bare")
        ax.legend()

    return Outcome(table, checks, {"profile": plot}, {"agreement_radius": radius},
                   failures=fails)


# ---------------------------------------------------------------------------
# lifetime-scan
# ---------------------------------------------------------------------------
def _drive_task(a):
    params, specs, duration, dt, seed, n_particles, prerun, rtol = a
    return record_drive(params, specs, duration, dt, seed, n_particles=n_particles,
                        prerun_periods=prerun, cfg=IntegratorConfig(rtol=rtol, atol=rtol))


@dataclass
class LifetimePoint:
    n: int
    density: float
    temperature: float
    tau: Optional[float]
    tau_err: Optional[float]
    tau_exact: Optional[float]
    t_ryd: float
    omega_ratio: float
    trajectories: int
    status: str


def lifetime_point(records, k: int, n_traj: int, seed, *, windows: int = 40, points: int = 150,
                   floor: float = 0.6, min_points: int = 15) -> tuple:
    """TWA lifetime (scaled) for oscillator ``k`` of a set of drive records.

    The window length comes from a pilot pass with the exact displaced-state
    population: about 1.5 times the time it takes to fall below ``floor``.
    Returns (LifetimeFit of the TWA trace, LifetimeFit of the exact trace,
    trajectories, status).
    """
    spec = records[0].specs[k]
    n_t = len(records[0].t)
    w_max = (n_t - 1) // 2
    pilot_stride = max(1, w_max // 2000)
    w_max -= w_max % pilot_stride
    spacing = max(1, (n_t - 1 - w_max) // windows)
    t, p = window_exact(records, k, w_max, spacing, pilot_stride)
    below = np.flatnonzero(p / p[0] < floor)
    if not below.size:
        win, status = w_max, "censored"
    else:
        t_floor = t[below[0]]
        dt = records[0].t[1] - records[0].t[0]
        win = min(w_max, int(math.ceil(1.5 * t_floor / dt)))
        status = "ok"
        if t_floor / dt < min_points:
            return None, None, 0, "unresolved"
    stride = max(1, win // points)
    win -= win % stride
    spacing = max(1, (n_t - 1 - win) // windows)
    n_windows = len(range(0, n_t - 1 - win, spacing))
    per_window = max(2, int(math.ceil(n_traj / (n_windows * len(records)))))
    trace = window_trace(records, k, win, spacing, per_window, seed,
                         levels=[spec.n_osc], stride=stride)
    te, pe = window_exact(records, k, win, spacing, stride)
    fit = fit_lifetime(trace, floor=floor)
    exact = fit_lifetime((te, pe), floor=floor)
    if fit.censored:
        status = "censored"
    return fit, exact, trace.trajectories, status


def lifetime_scan(cfg: ExperimentConfig) -> Outcome:
    ctx = cfg.ctx
    run = cfg.run
    ns = [int(n) for n in cfg.exciton["n"]]
    specs = [OscillatorSpec.for_level(n, ctx) for n in ns]
    points = cfg.plasma_points()
    reals = int(cfg.ensemble.get("realizations", 2))
    n_traj = int(cfg.ensemble.get("n_traj", 100_000))
    t_ryd_min = min(s.period for s in specs)
    tasks, index = [], []
    seeds = task_seeds(cfg.seed, len(points) * (reals + 1))
    for i, p in enumerate(points):
        tau = ctx.to_scaled(p.tau_p, "time")
        dt = min(tau / float(run["samples_per_period"]),
                 t_ryd_min / float(run.get("samples_per_ryd", 10)))
        for r in range(reals):
            tasks.append((p, specs, float(run["duration_periods"]) * tau, dt,
                          seeds[i * (reals + 1) + r], int(run["n_particles"]),
                          float(run["prerun_periods"]), float(run["rtol"])))
            index.append(i)
    records, fails = run_tasks(_drive_task, tasks, cfg.workers)
    failures = [f"drive task {j} (density {tasks[j][0].density:.3g}, T {tasks[j][0].temperature:.3g}):"
                f" {msg}" for j, msg in fails]

    results: list[LifetimePoint] = []
    for i, p in enumerate(points):
        recs = [rec for rec, j in zip(records, index) if j == i and rec is not None]
        for k, (n, spec) in enumerate(zip(ns, specs)):
            sc = rydberg_scales(n, ctx)
            ratio = sc.omega_ryd / p.omega_p
            if not recs:
                results.append(LifetimePoint(n, p.density, p.temperature, None, None, None,
                                             sc.t_ryd, ratio, 0, "failed"))
                continue
            try:
                fit, exact, used, status = lifetime_point(
                    recs, k, n_traj, seeds[i * (reals + 1) + reals].spawn(len(ns))[k],
                    windows=int(run["windows"]), points=int(run["points"]))
            except InvalidParameter as exc:
                failures.append(f"n={n} density {p.density:.3g}: {exc}")
                fit, exact, used, status = None, None, 0, "unresolved"
            tau = err = tex = None
            if fit is not None and not fit.censored:
                tau, err = _si(ctx, fit.tau, "time"), _si(ctx, fit.stderr, "time")
            if exact is not None and not exact.censored:
                tex = _si(ctx, exact.tau, "time")
            results.append(LifetimePoint(n, p.density, p.temperature, tau, err, tex, sc.t_ryd,
                                         ratio, used, status))

    table = ResultTable(["n", "density_m3", "temperature_K", "status", "trajectories"],
                        ["tau_s", "tau_exact_s", "tau_over_tryd", "omega_ryd_over_omega_p"])
    nan = float("nan")
    for r in results:
        table.add({"n": r.n, "density_m3": r.density, "temperature_K": r.temperature,
                   "status": r.status, "trajectories": r.trajectories},
                  {"tau_s": (r.tau if r.tau else nan, r.tau_err if r.tau else nan),
                   "tau_exact_s": (r.tau_exact if r.tau_exact else nan, None),
                   "tau_over_tryd": (r.tau / r.t_ryd if r.tau else nan,
                                     r.tau_err / r.t_ryd if r.tau else nan),
                   "omega_ryd_over_omega_p": (r.omega_ratio, None)})
    outcome = Outcome(table, failures=failures)
    analyse_lifetimes(results, cfg, outcome)
    return outcome


def _good(rs):
    return [r for r in rs if r.tau and r.tau_err and r.tau_err > 0 and r.status == "ok"]


def analyse_lifetimes(results: Sequence[LifetimePoint], cfg: ExperimentConfig, outcome: Outcome):
    """Power-law fits over density and temperature, the vertical cut and critical densities."""
    ctx = cfg.ctx
    run = cfg.run
    table, checks = outcome.table, outcome.checks
    temps = sorted({r.temperature for r in results})
    dens = sorted({r.density for r in results})
    ns = sorted({r.n for r in results})
    density_fits, crit = {}, {}
    for T in temps:
        for n in ns:
            pts = _good([r for r in results if r.n == n and r.temperature == T])
            if len(pts) < 3:
                continue
            fit = fit_power_law([r.density for r in pts], [r.tau for r in pts],
                                [r.tau_err for r in pts])
            density_fits[(n, T)] = fit
            table.fits.append(FitRecord.of(f"tau_vs_density n={n} T={T:g}K", fit))
            norm = fit_power_law([r.omega_ratio for r in pts], [r.tau / r.t_ryd for r in pts],
                                 [r.tau_err / r.t_ryd for r in pts])
            table.fits.append(FitRecord.of(f"tau_over_tryd_vs_frequency_ratio n={n} T={T:g}K",
                                           norm))
            checks.append(Check(f"lifetime-vs-density exponent n={n} T={T:g}K",
                                -1.3 <= fit.exponent <= -0.7,
                                f"{fit.exponent:.3f} +- {fit.stderr:.3f}", "[-1.3, -0.7]"))
            checks.append(Check(f"normalized-lifetime slope n={n} T={T:g}K",
                                abs(norm.exponent - 2.0) <= 0.4,
                                f"{norm.exponent:.3f} +- {norm.stderr:.3f}", "2 +- 0.4"))
            try:
                crit[(n, T)] = critical_density(fit, n, ctx)
            except InvalidParameter as exc:
                outcome.failures.append(f"critical density n={n}: {exc}")
        fits_T = {n: density_fits[(n, T)] for n in ns if (n, T) in density_fits}
        if len(fits_T) >= 3:
            rho_cut = float(run.get("cut_density", dens[len(dens) // 2]))
            with warnings.catch_warnings(record=True):
                warnings.simplefilter("always")
                cut = vertical_cut(fits_T, rho_cut)
            table.fits.append(FitRecord.of(f"vertical_cut rho={rho_cut:.3g} T={T:g}K", cut.fit))
            outcome.extra.setdefault("cut_warnings", []).extend(cut.warnings)
            checks.append(Check(f"lifetime-vs-n exponent at rho={rho_cut:.3g} T={T:g}K",
                                -8.0 <= cut.fit.exponent <= -6.0,
                                f"{cut.fit.exponent:.3f} +- {cut.fit.stderr:.3f}", "[-8, -6]"))
        crit_T = {n: crit[(n, T)] for n in ns if (n, T) in crit}
        if len(crit_T) >= 3:
            cfit = fit_power_law(list(crit_T), list(crit_T.values()))
            table.fits.append(FitRecord.of(f"critical_density_vs_n T={T:g}K", cfit))
            checks.append(Check(f"critical-density exponent T={T:g}K",
                                -9.5 <= cfit.exponent <= -7.5,
                                f"{cfit.exponent:.3f} +- {cfit.stderr:.3f}", "[-9.5, -7.5]"))
            outcome.extra["critical_densities"] = {str(n): v for n, v in crit_T.items()}
    if len(temps) >= 3:
        for rho in dens:
            for n in ns:
                pts = _good([r for r in results if r.n == n and r.density == rho])
                if len(pts) < 3:
                    continue
                fit = fit_power_law([r.temperature for r in pts], [r.tau for r in pts],
                                    [r.tau_err for r in pts])
                table.fits.append(FitRecord.of(f"tau_vs_temperature n={n} rho={rho:.3g}", fit))
                checks.append(Check(f"lifetime-vs-T exponent n={n} rho={rho:.3g}",
                                    -0.65 <= fit.exponent <= -0.35,
                                    f"{fit.exponent:.3f} +- {fit.stderr:.3f}", "[-0.65, -0.35]"))

    def plot(ax):
        for (n, T), fit in density_fits.items():
            pts = _good([r for r in results if r.n == n and r.temperature == T])
            x = np.array([r.density for r in pts])
            line = ax.errorbar(x, [r.tau for r in pts], [r.tau_err for r in pts], fmt="o",
                               label=f"n={n}, T={T:g} K")
            xx = np.geomspace(x.min(), x.max(), 50)
            ax.plot(xx, fit(xx), "--", color=line[0].get_color())
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("density (m^-3)")
        ax.set_ylabel("lifetime (s)")
        ax.legend(fontsize=7)

    outcome.plots["lifetimes"] = plot


# ---------------------------------------------------------------------------
# classical-lifetime
# ---------------------------------------------------------------------------
def _classical_task(a):
    n, l, params, n_traj, seed, run = a
    return classical_lifetime_mc(n, l, params, n_traj, seed,
                                 n_particles=int(run["n_particles"]),
                                 prerun_periods=float(run["prerun_periods"]),
                                 cap_periods=float(run["cap_periods"]),
                                 cfg=IntegratorConfig(rtol=float(run["rtol"]),
                                                      atol=float(run["rtol"])))


def classical_lifetime(cfg: ExperimentConfig) -> Outcome:
    ctx = cfg.ctx
    ns = [int(n) for n in cfg.exciton["n"]]
    l = cfg.exciton.get("l")
    points = cfg.plasma_points()
    n_traj = int(cfg.ensemble.get("n_traj", 8))
    combos = [(n, p) for n in ns for p in points]
    seeds = task_seeds(cfg.seed, len(combos))
    args = [(n, None if l is None else min(int(l), n - 1), p, n_traj, s, cfg.run)
            for (n, p), s in zip(combos, seeds)]
    recs, fails = run_tasks(_classical_task, args, cfg.workers)
    table = ResultTable(["n", "density_m3", "temperature_K", "decayed", "censored"],
                        ["tau_s", "tau_lower_s", "tau_over_tryd"])
    nan = float("nan")
    for (n, p), rec in zip(combos, recs):
        if rec is None:
            continue
        t_ryd = rydberg_scales(n, ctx).t_ryd
        tau = _si(ctx, rec.tau, "time") if rec.tau else nan
        err = _si(ctx, rec.tau_stderr, "time") if rec.tau else nan
        low = _si(ctx, rec.tau_lower, "time") if rec.tau_lower else nan
        table.add({"n": n, "density_m3": p.density, "temperature_K": p.temperature,
                   "decayed": int(rec.decayed.sum()), "censored": int((~rec.decayed).sum())},
                  {"tau_s": (tau, err), "tau_lower_s": (low, None),
                   "tau_over_tryd": (tau / t_ryd, err / t_ryd)})

    def plot(ax):
        for (n, p), rec in zip(combos, recs):
            if rec is not None:
                ax.step(np.asarray(rec.curve_t) / rec.t_ryd, rec.curve_s, where="post",
                        label=f"n={n}, rho={p.density:.2g}")
        ax.set_xlabel("t / t_Ryd")
        ax.set_ylabel("survival")
        ax.legend(fontsize=7)

    return Outcome(table, [], {"survival": plot},
                   failures=[f"task {i}: {m}" for i, m in fails])


# ---------------------------------------------------------------------------
# screening experiments
# ---------------------------------------------------------------------------
def _profile_rows(table, label: dict, prof):
    x = prof.scaled_centers()
    ref = prof.reference_ratio if prof.reference_ratio is not None else np.full(len(x), np.nan)
    for xi, r, e, c, f in zip(x, prof.ratio, prof.stderr, prof.counts, ref):
        table.add(dict(label, r_over_lambda=float(xi), samples=int(c)),
                  {"ratio": (float(r), float(e)), "reference": (float(f), None)})


def _ellipse_task(a):
    n, xi, prec, scale, params, seed, bins, settings = a
    orbit = init_kepler(n, xi=xi, omega_scale=scale, ctx=params.ctx)
    orbit = precess(orbit, prec * orbit.omega)
    return orbit_screening_profile(orbit, params, seed, bins=bins, settings=settings)


def screening_ellipse(cfg: ExperimentConfig) -> Outcome:
    params = cfg.plasma_points()[0]
    n = int(cfg.exciton["n"][0])
    xi = float(cfg.exciton.get("xi", 0.95))
    prec = float(cfg.exciton.get("omega_prec", 0.2))
    scales = [float(s) for s in cfg.run["frequency_scales"]]
    seeds = task_seeds(cfg.seed, len(scales))
    settings = _settings(cfg.run)
    args = [(n, xi, prec, s, params, sd, int(cfg.run["bins"]), settings)
            for s, sd in zip(scales, seeds)]
    profiles, fails = run_tasks(_ellipse_task, args, cfg.workers)
    table = ResultTable(["frequency_scale", "r_over_lambda", "samples"], ["ratio", "reference"])
    checks = []
    for s, prof in zip(scales, profiles):
        if prof is None:
            continue
        _profile_rows(table, {"frequency_scale": s}, prof)
        ok = prof.counts > 0
        if s == 1.0:
            diff = prof.ratio[ok] - prof.reference_ratio[ok]
            err = prof.stderr[ok]
            z = float(diff.sum() / math.sqrt(np.sum(err**2))) if np.all(err > 0) else float("nan")
            checks.append(Check("elliptic orbit lies above the Debye curve",
                                bool(diff.mean() > 0 and np.mean(diff > 0) >= 0.5),
                                f"mean excess {diff.mean():.4f}, {np.mean(diff > 0):.0%} of bins "
                                f"above, z={z:.2f}", "mean excess > 0, majority above"))
        elif s >= 10.0:
            dev = np.abs(prof.ratio[ok] - 1.0)
            checks.append(Check(f"elliptic orbit at {s:g}x frequency unscreened",
                                bool(np.all(dev <= 0.05)),
                                f"max |ratio-1| {dev.max():.3f}, bin errors "
                                f"{prof.stderr[ok].min():.3f}-{prof.stderr[ok].max():.3f}",
                                "<= 0.05"))

    def plot(ax):
        for s, prof in zip(scales, profiles):
            if prof is not None:
                ax.errorbar(prof.scaled_centers(), prof.ratio, prof.stderr, fmt="o-", ms=3,
                            label=f"{s:g} x omega_Ryd")
        prof = next((p for p in profiles if p is not None), None)
        if prof is not None:
            ax.plot(prof.scaled_centers(), prof.reference_ratio, "k:", label="Debye")
        ax.set_xlabel("r / lambda")
        ax.set_ylabel("E / E_bare")
        ax.legend()

    return Outcome(table, checks, {"ellipse": plot},
                   failures=[f"scale task {i}: {m}" for i, m in fails])


def _ring_task(a):
    m, masses, seps, omega, params, seed, settings = a
    return ring_fragment_profile(m, masses, seps, omega, params, seed, settings=settings)


def _profiles_agree(a, b) -> tuple[bool, float]:
    ok = (a.counts > 0) & (b.counts > 0)
    err = np.hypot(a.stderr[ok], b.stderr[ok])
    if not ok.any() or not np.all(np.isfinite(err) & (err > 0)):
        return False, float("nan")
    z = np.abs(a.ratio[ok] - b.ratio[ok]) / err
    return bool(np.all(z <= 3.0)), float(z.max())


def screening_circular(cfg: ExperimentConfig) -> Outcome:
    params = cfg.plasma_points()[0]
    run = cfg.run
    omegas = [float(w) for w in run["omega_over_wp"]]
    seps = [float(x) for x in run["separations_over_lambda"]]
    seeds = task_seeds(cfg.seed, len(omegas))
    settings = _settings(run)
    args = [(1, run["masses"], seps, w, params, s, settings) for w, s in zip(omegas, seeds)]
    profiles, fails = run_tasks(_ring_task, args, cfg.workers)
    table = ResultTable(["omega_over_wp", "r_over_lambda", "samples"], ["ratio", "reference"])
    checks = []
    for w, prof in zip(omegas, profiles):
        if prof is None:
            continue
        _profile_rows(table, {"omega_over_wp": w}, prof)
        if run["masses"] != "equal":
            continue
        if w <= 0.1 + 1e-12:
            dev = np.abs(prof.ratio / prof.reference_ratio - 1.0)
            checks.append(Check(f"circular orbit at {w:g} omega_p matches Debye",
                                bool(np.all(dev <= 0.1)), f"max dev {dev.max():.3f}", "<= 0.10"))
        elif w >= 100.0 - 1e-9:
            dev = np.abs(prof.ratio - 1.0)
            checks.append(Check(f"circular orbit at {w:g} omega_p unscreened",
                                bool(np.all(dev <= 0.05)), f"max |ratio-1| {dev.max():.3f}",
                                "<= 0.05"))

    def plot(ax):
        for w, prof in zip(omegas, profiles):
            if prof is not None:
                ax.errorbar(prof.scaled_centers(), prof.ratio, prof.stderr, fmt="o-", ms=3,
                            label=f"{w:g} omega_p")
        xx = np.linspace(0.05, max(seps) * 1.05, 200)
        ax.plot(xx, np.exp(-xx) * (1 + xx), "k--", label="Debye")
        ax.set_xlabel("r / lambda")
        ax.set_ylabel("E / E_bare")
        ax.legend()

    return Outcome(table, checks, {"circular": plot},
                   failures=[f"frequency task {i}: {m}" for i, m in fails])


def ring_fragments(cfg: ExperimentConfig) -> Outcome:
    params = cfg.plasma_points()[0]
    run = cfg.run
    ms = [int(m) for m in run["fragments"]]
    seps = [float(x) for x in run["separations_over_lambda"]]
    omega = float(run["omega_over_wp"])
    seeds = task_seeds(cfg.seed, len(ms))
    settings = _settings(run)
    args = [(m, run["masses"], seps, omega, params, s, settings) for m, s in zip(ms, seeds)]
    profiles, fails = run_tasks(_ring_task, args, cfg.workers)
    table = ResultTable(["fragments", "r_over_lambda", "samples"], ["ratio", "reference"])
    for m, prof in zip(ms, profiles):
        if prof is not None:
            _profile_rows(table, {"fragments": m}, prof)
    checks = []
    if 1 in ms:
        single = profiles[ms.index(1)]
        for m, prof in zip(ms, profiles):
            if m == 1 or prof is None or single is None:
                continue
            ok, zmax = _profiles_agree(prof, single)
            checks.append(Check(f"M={m} ring matches the single fast charge", ok,
                                f"max |z| {zmax:.2f}", "<= 3 sigma per bin"))

    def plot(ax):
        for m, prof in zip(ms, profiles):
            if prof is not None:
                ax.errorbar(prof.scaled_centers(), prof.ratio, prof.stderr, fmt="o-", ms=3,
                            label=f"M={m}")
        ax.set_xlabel("r / lambda")
        ax.set_ylabel("E / E_bare")
        ax.legend()

    return Outcome(table, checks, {"fragments": plot},
                   failures=[f"fragment task {i}: {m}" for i, m in fails])


def _dipole_task(a):
    amp, omega, params, seed, radii, settings = a
    return oscillating_dipole_profile(amp, omega, params, seed, radii_over_lambda=radii,
                                      settings=settings)


def dipole_screening(cfg: ExperimentConfig) -> Outcome:
    params = cfg.plasma_points()[0]
    run = cfg.run
    omegas = [float(w) for w in run["omega_over_wp"]]
    radii = np.asarray(run["radii_over_lambda"], dtype=float)
    seeds = task_seeds(cfg.seed, len(omegas))
    settings = _settings(run)
    args = [(float(run["amplitude_over_lambda"]), w, params, s, radii, settings)
            for w, s in zip(omegas, seeds)]
    profiles, fails = run_tasks(_dipole_task, args, cfg.workers)
    table = ResultTable(["omega_over_wp", "half", "r_over_lambda", "samples"],
                        ["ratio", "reference"])
    checks = []
    slow, fast = min(omegas), max(omegas)
    for w, prof in zip(omegas, profiles):
        if prof is None:
            continue
        _profile_rows(table, {"omega_over_wp": w, "half": "positive"}, prof)
        if prof.other_half is not None:
            _profile_rows(table, {"omega_over_wp": w, "half": "negative"}, prof.other_half)
            checks.append(Check(f"half periods consistent at {w:.3g} omega_p",
                                half_periods_consistent(prof), "3 sigma per bin", "consistent"))
        if w == slow and len(omegas) > 1:
            dev = np.abs(prof.ratio / prof.reference_ratio - 1.0)
            checks.append(Check(f"dipole at {w:.3g} omega_p matches the screened dipole",
                                bool(np.all(dev <= 0.1)), f"max dev {dev.max():.3f}", "<= 0.10"))
        if w == fast and len(omegas) > 1:
            dev = np.abs(prof.ratio - 1.0)
            checks.append(Check(f"dipole at {w:.3g} omega_p unscreened",
                                bool(np.all(dev <= 0.05)), f"max |ratio-1| {dev.max():.3f}",
                                "<= 0.05"))

    def plot(ax):
        for w, prof in zip(omegas, profiles):
            if prof is not None:
                ax.errorbar(prof.scaled_centers(), prof.ratio, prof.stderr, fmt="o-", ms=3,
                            label=f"{w:.3g} omega_p")
                ax.plot(prof.scaled_centers(), prof.reference_ratio, "k--")
        ax.set_xlabel("r / lambda")
        ax.set_ylabel("E / E_bare (axis)")
        ax.legend()

    return Outcome(table, checks, {"dipole": plot},
                   failures=[f"frequency task {i}: {m}" for i, m in fails])


# ---------------------------------------------------------------------------
# regime diagram
# ---------------------------------------------------------------------------
def screening_limit_density(n: int, T, size_over_lambda: float = 0.5,
                            ctx: MaterialContext = DEFAULT_CONTEXT):
    """Density (m^-3) where <r>_n / lambda reaches ``size_over_lambda``; rho ~ T."""
    r = rydberg_scales(n, ctx).r_exp
    lam = r / size_over_lambda
    return ctx.epsilon * KB * np.asarray(T, dtype=float) / (E_CHARGE**2 * lam**2)


def coupling_limit_density(T, gamma: float = GAMMA_WEAK_LIMIT,
                           ctx: MaterialContext = DEFAULT_CONTEXT):
    """Density (m^-3) with coupling constant ``gamma`` at temperature T; rho ~ T^3."""
    T = np.asarray(T, dtype=float)
    g1 = coupling_constant(1.0, 1.0, ctx)  # Gamma = g1 rho^(1/3) / T
    return (gamma * T / g1) ** 3


def regime_diagram(n: int, temperatures, rho_ref: float, T_ref: float,
                   ctx: MaterialContext = DEFAULT_CONTEXT, size_over_lambda: float = 0.5
                   ) -> ResultTable:
    """Observable, screening and coupling limits on a temperature grid."""
    T = np.asarray(temperatures, dtype=float)
    obs = critical_density_at(rho_ref, T_ref, T)
    scr = screening_limit_density(n, T, size_over_lambda, ctx)
    gam = coupling_limit_density(T, GAMMA_WEAK_LIMIT, ctx)
    table = ResultTable(["n", "temperature_K"],
                        ["observable_limit_m3", "screening_limit_m3", "coupling_limit_m3"])
    for t, a, b, c in zip(T, obs, scr, gam):
        table.add({"n": n, "temperature_K": float(t)},
                  {"observable_limit_m3": (float(a), None), "screening_limit_m3": (float(b), None),
                   "coupling_limit_m3": (float(c), None)})
    return table


def regime(cfg: ExperimentConfig) -> Outcome:
    ctx = cfg.ctx
    n = int(cfg.exciton["n"][0])
    temps = [float(t) for t in cfg.plasma["temperatures"]]
    run = cfg.run
    table = regime_diagram(n, temps, float(run["reference_density"]),
                           float(run["reference_temperature"]), ctx,
                           float(run.get("size_over_lambda", 0.5)))
    T = table.column("temperature_K")
    obs, scr, gam = (table.column(c) for c in
                     ("observable_limit_m3", "screening_limit_m3", "coupling_limit_m3"))
    weak = obs < gam
    checks = [Check(f"screening limit above observable limit (n={n}, weakly coupled)",
                    bool(np.all(scr[weak] > obs[weak])) and bool(weak.any()),
                    f"{int(weak.sum())} weakly coupled temperatures, min ratio "
                    f"{(scr[weak] / obs[weak]).min() if weak.any() else float('nan'):.3g}",
                    "ratio > 1")]

    def plot(ax):
        ax.plot(T, obs, "r-", label="observable limit")
        ax.plot(T, scr, "b--", label="screening limit")
        ax.plot(T, gam, "k:", label=f"Gamma = {GAMMA_WEAK_LIMIT}")
        ax.fill_between(T, gam, max(gam.max(), scr.max()) * 10, color="0.85")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("T (K)")
        ax.set_ylabel("density (m^-3)")
        ax.legend()

    return Outcome(table, checks, {"regime": plot})


# ---------------------------------------------------------------------------
# coupled-transfer
# ---------------------------------------------------------------------------
def _coupled_task(a):
    n, D, params, n_traj, seed, run = a
    kw = {}
    if params is not None:
        kw = dict(n_particles=int(run["n_particles"]), prerun_periods=float(run["prerun_periods"]),
                  cfg=IntegratorConfig(rtol=float(run["rtol"]), atol=float(run["rtol"])))
    return coupled_transfer(n, D, params, n_traj, seed, n_out=int(run["n_out"]), **kw)


def coupled(cfg: ExperimentConfig) -> Outcome:
    ctx = cfg.ctx
    params = cfg.plasma_points()[0]
    n = int(cfg.exciton["n"][0])
    run = cfg.run
    lam = ctx.to_scaled(params.debye_length, "length")
    D = float(run["separation_over_lambda"]) * lam
    seeds = task_seeds(cfg.seed, 2)
    args = [(n, D, None, int(run["vacuum_trajectories"]), seeds[0], run),
            (n, D, params, int(cfg.ensemble.get("n_traj", 16)), seeds[1], run)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traces, fails = run_tasks(_coupled_task, args, cfg.workers)
    vac, pl = traces
    t_vac = vacuum_transfer_time(n, D, ctx)
    t_deb = t_vac / screened_coupling_ratio(D, lam, ctx.to_scaled(params.soft_core, "length"))
    table = ResultTable(["run", "t_s"], ["E1", "E2", "dE_scaled"])
    checks = []
    for name, tr in (("vacuum", vac), ("plasma", pl)):
        if tr is None:
            continue
        for i, t in enumerate(tr.t):
            table.add({"run": name, "t_s": _si(ctx, t, "time")},
                      {"E1": (float(tr.E1[i]), float(tr.E1_err[i])),
                       "E2": (float(tr.E2[i]), float(tr.E2_err[i])),
                       "dE_scaled": (float(tr.dE_scaled[i]), float(tr.dE_scaled_err[i]))})
    if vac is not None:
        rel = abs(vac.transfer_time / t_vac - 1.0)
        checks.append(Check("vacuum transfer time matches pi m omega / g", rel <= 0.02,
                            f"relative deviation {rel:.2e}", "<= 0.02"))
    if pl is not None:
        z_vac, z_deb = pl.z_scores()
        checks.append(Check("plasma run inside its validity regime", bool(pl.regime_valid),
                            f"lifetime {pl.lifetime / t_vac:.3g} vacuum transfer times",
                            "transfer time < lifetime"))
        checks.append(Check("compensated transfer matches the unscreened reference",
                            bool(abs(z_vac) <= 3.0), f"z = {z_vac:.2f}", "|z| <= 3"))
        checks.append(Check("compensated transfer rejects the Debye-screened reference",
                            bool(z_deb > 3.0), f"z = {z_deb:.2f}", "> 3"))
    extra = {"vacuum_time_s": _si(ctx, t_vac, "time"), "debye_time_s": _si(ctx, t_deb, "time")}
    if pl is not None:
        extra.update(transfer_time_s=_si(ctx, pl.transfer_time, "time")
                     if math.isfinite(pl.transfer_time) else None,
                     lifetime_s=_si(ctx, pl.lifetime, "time") if math.isfinite(pl.lifetime)
                     else None, regime_valid=bool(pl.regime_valid))

    def plot(ax):
        for name, tr, style in (("vacuum", vac, "k-"), ("plasma", pl, "o")):
            if tr is not None:
                ax.errorbar(tr.t / t_vac, tr.dE_scaled, tr.dE_scaled_err, fmt=style, ms=2,
                            label=name)
        tt = np.linspace(0, 1, 200) * (vac.t[-1] if vac is not None else t_vac)
        n_osc = rydberg_scales(n, ctx).n_osc
        ax.plot(tt / t_vac, n_osc * np.cos(math.pi * tt / t_vac), "g--", label="unscreened")
        ax.plot(tt / t_vac, n_osc * np.cos(math.pi * tt / t_deb), "r:", label="Debye")
        ax.set_xlabel("t / T_vacuum")
        ax.set_ylabel("dE (hbar omega)")
        ax.legend()

    return Outcome(table, checks, {"transfer": plot}, extra,
                   failures=[f"{('vacuum', 'plasma')[i]} run: {m}" for i, m in fails])


# ---------------------------------------------------------------------------
# toy-benchmark
# ---------------------------------------------------------------------------
def toy_benchmark(cfg: ExperimentConfig) -> Outcome:
    run = cfg.run
    toy = ToyConfig(n=int(cfg.exciton["n"][0]), grid=tuple(int(g) for g in run["grid"]),
                    periods=float(run["periods"]), packet_width_dh=float(run["packet_width_dh"]),
                    dt_safety=float(run["dt_safety"]), ctx=cfg.ctx)
    se = se_evolve(toy)
    tw = twa_toy(toy, int(cfg.ensemble.get("n_traj", 400_000)), cfg.seed)
    ref = np.interp(tw.t_over_period, se.t_over_period, se.p0)
    table = ResultTable(["t_over_period"], ["p0_se", "p0_twa"])
    for t, a, b, e in zip(tw.t_over_period, ref, tw.p0, tw.stderr):
        table.add({"t_over_period": float(t)}, {"p0_se": (float(a), None),
                                                 "p0_twa": (float(b), float(e))})
    sup = sup_difference(se, tw)
    checks = [Check("SE and TWA populations agree (sup norm)", sup <= 0.05,
                    f"{sup:.4f} (TWA stderr <= {tw.stderr.max():.4f})", "<= 0.05"),
              Check("SE norm drift", se.norm_drift <= 1e-6, f"{se.norm_drift:.2e}", "<= 1e-6")]

    def plot(ax):
        ax.plot(se.t_over_period, se.p0, "k-", label="SE")
        ax.errorbar(tw.t_over_period, tw.p0, tw.stderr, fmt=".", ms=2, label="TWA")
        ax.set_xlabel("t / T_osc")
        ax.set_ylabel("P0")
        ax.legend()

    return Outcome(table, checks, {"toy": plot},
                   {"sup_difference": sup, "norm_drift": se.norm_drift})


RUNNERS = {
    "debye-check": debye_check,
    "lifetime-scan": lifetime_scan,
    "classical-lifetime": classical_lifetime,
    "screening-ellipse": screening_ellipse,
    "screening-circular": screening_circular,
    "ring-fragments": ring_fragments,
    "regime-diagram": regime,
    "coupled-transfer": coupled,
    "dipole-screening": dipole_screening,
    "toy-benchmark": toy_benchmark,
}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------
def _write_plots(outcome: Outcome, plot_dir: Path) -> list:
    problems = []
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except Exception as exc:  # plotting is optional
        return [f"matplotlib unavailable: {exc}"]
    plot_dir.mkdir(parents=True, exist_ok=True)
    for name, draw in outcome.plots.items():
        fig = None
        try:
            fig, ax = plt.subplots(figsize=(5, 3.6))
            draw(ax)
            fig.tight_layout()
            fig.savefig(plot_dir / f"{name}.svg", format="svg", metadata={"Date": None})
        except Exception as exc:
            problems.append(f"plot {name}: {exc}")
        finally:
            if fig is not None:
                plt.close(fig)
    return problems


def run_experiment(cfg: ExperimentConfig, out_dir=None, *, plots: bool = True) -> RunResult:
    """Execute ``cfg`` and persist results.csv, summary.json and plots/*.svg under ``out_dir``."""
    start = time.perf_counter()
    numerical = None
    with np.errstate(over="ignore", under="ignore"):
        try:
            outcome = RUNNERS[cfg.experiment](cfg)
        except (IntegrationFailure, NormDriftError, FloatingPointError) as exc:
            numerical = f"{type(exc).__name__}: {exc}"
            outcome = Outcome(ResultTable([], []), failures=[numerical])
    wall = time.perf_counter() - start
    outcome.table.provenance.update({
        "experiment": cfg.experiment, "seed": cfg.seed, "config_hash": cfg.digest(),
        "code_version": __version__, "units": "SI (m, s, m^-3, K); ratios dimensionless",
    })
    if numerical is not None:
        code = EXIT_NUMERICAL
    elif outcome.table.rows == [] and outcome.failures:
        code = EXIT_NUMERICAL
    elif not all(c.passed for c in outcome.checks):
        code = EXIT_ACCEPTANCE
    else:
        code = EXIT_OK
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        outcome.table.write_csv(out / "results.csv")
        plot_problems = _write_plots(outcome, out / "plots") if plots else []
        summary = {
            "experiment": cfg.experiment, "seed": cfg.seed, "config_hash": cfg.digest(),
            "code_version": __version__, "wall_time_s": round(wall, 3), "exit_code": code,
            "config": _plain(cfg.as_dict()),
            "checks": [{"name": c.name, "passed": bool(c.passed), "value": str(c.value),
                        "target": c.target} for c in outcome.checks],
            "fits": [f.as_dict() for f in outcome.table.fits],
            "extra": _plain(outcome.extra),
            "failures": list(outcome.failures),
            "plot_problems": plot_problems,
        }
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True, default=str)
        if outcome.failures:
            with open(out / "failures.json", "w", encoding="utf-8") as fh:
                json.dump({"failures": list(outcome.failures)}, fh, indent=2)
    return RunResult(cfg, outcome, out, wall, code)


__all__ = [
    "EXPERIMENTS", "DEFAULTS", "ConfigError", "ExperimentConfig", "ResultTable", "FitRecord",
    "Check", "Outcome", "RunResult", "run_tasks", "task_seeds", "lifetime_point",
    "LifetimePoint", "analyse_lifetimes", "regime_diagram", "screening_limit_density",
    "coupling_limit_density", "run_experiment", "RUNNERS", "EXIT_OK", "EXIT_CONFIG",
    "EXIT_NUMERICAL", "EXIT_ACCEPTANCE",
]
