"""Embedded Cash-Karp 4(5) Runge-Kutta stepper with quality-controlled step size.

Step control follows the classic ``rkqs`` recipe: the fifth-order solution is
propagated, the difference to the embedded fourth-order solution estimates
the local error, a step whose scaled error exceeds one is rejected and
retried with at most half the step, and accepted steps grow the next step by
at most a factor of five.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

# Cash & Karp (1990) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 3 / 5, 1.0, 7 / 8])
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (3 / 10, -9 / 10, 6 / 5),
    (-11 / 54, 5 / 2, -70 / 27, 35 / 27),
    (1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096),
)
_B5 = np.array([37 / 378, 0.0, 250 / 621, 125 / 594, 0.0, 512 / 1771])
_B4 = np.array([2825 / 27648, 0.0, 18575 / 48384, 13525 / 55296, 277 / 14336, 1 / 4])
_E = _B5 - _B4

SAFETY = 0.9
GROW_LIMIT = 5.0
SHRINK_LIMIT = 0.1


class IntegrationFailure(RuntimeError):
    """Step size underflow or too many rejections; carries the failing state."""

    def __init__(self, message: str, t: float, h: float, error: float):
        super().__init__(f"{message} (t={t:.6g}, h={h:.3g}, scaled error={error:.3g})")
        self.t = t
        self.h = h
        self.error = error


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-8
    atol: float = 1e-8
    initial_step: Optional[float] = None
    min_step: float = 1e-30
    max_step: float = np.inf
    max_rejects: int = 60

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if not self.min_step < self.max_step:
            raise ValueError("min_step must be below max_step")


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    evaluations: int = 0


class CashKarp:
    """Adaptive integrator for ``dy/dt = rhs(t, y)``.

    ``scale`` gives a per-component characteristic magnitude; the absolute
    tolerance is ``atol * scale``.
    """

    def __init__(self, rhs: Callable[[float, np.ndarray], np.ndarray], cfg: IntegratorConfig,
                 scale=1.0):
        self.rhs = rhs
        self.cfg = cfg
        self.scale = scale
        self.stats = StepStats()
        self.last_step = 0.0

    def error_norm(self, y, y_new, err):
        tol = self.cfg.atol * self.scale + self.cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
        return float(np.max(np.abs(err) / tol)) if err.size else 0.0

    def attempt(self, t: float, y: np.ndarray, h: float, k0: Optional[np.ndarray] = None):
        """One trial step; returns (y5, scaled error)."""
        ks = [self.rhs(t, y) if k0 is None else k0]
        for i in range(1, 6):
            yi = y.copy()
            for a, k in zip(_A[i], ks):
                if a != 0.0:
                    yi += (h * a) * k
            ks.append(self.rhs(t + _C[i] * h, yi))
        self.stats.evaluations += 6 if k0 is None else 5
        y5 = y.copy()
        err = np.zeros_like(y)
        for b, e, k in zip(_B5, _E, ks):
            if b != 0.0:
                y5 += (h * b) * k
            if e != 0.0:
                err += (h * e) * k
        return y5, self.error_norm(y, y5, err)

    def initial_step(self, t, y, t_end):
        if self.cfg.initial_step is not None:
            return self.cfg.initial_step
        f0 = self.rhs(t, y)
        self.stats.evaluations += 1
        tol = self.cfg.atol * self.scale + self.cfg.rtol * np.abs(y)
        d0 = np.max(np.abs(y) / tol)
        d1 = np.max(np.abs(f0) / tol)
        h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6 * abs(t_end - t)
        return float(min(h, abs(t_end - t), self.cfg.max_step))

    def step(self, t: float, y: np.ndarray, h: float):
        """Take one accepted step of at most ``h``; returns (t_new, y_new, h_next)."""
        cfg = self.cfg
        k0 = self.rhs(t, y)
        self.stats.evaluations += 1
        for _ in range(cfg.max_rejects):
            y5, err = self.attempt(t, y, h, k0)
            if err <= 1.0 and np.all(np.isfinite(y5)):
                self.stats.accepted += 1
                grow = GROW_LIMIT if err == 0.0 else min(GROW_LIMIT, SAFETY * err ** -0.2)
                self.last_step = h
                return t + h, y5, min(h * max(grow, 1.0), cfg.max_step)
            self.stats.rejected += 1
            if not np.isfinite(err):
                shrink = SHRINK_LIMIT
            else:
                shrink = min(0.5, max(SHRINK_LIMIT, SAFETY * err ** -0.25))
            h *= shrink
            if abs(h) < cfg.min_step:
                raise IntegrationFailure("step size underflow", t, h, err)
        raise IntegrationFailure("too many rejected steps", t, h, err)

    def advance(self, t: float, y: np.ndarray, t_end: float, h: Optional[float] = None):
        """Integrate to exactly ``t_end``; returns (y, h_next)."""
        if h is None:
            h = self.initial_step(t, y, t_end)
        while t < t_end:
            remaining = t_end - t
            last = h >= remaining
            trial = min(h, remaining)
            t_new, y, h_next = self.step(t, y, trial)
            if last and self.last_step == trial:
                # a step clipped to land on t_end says nothing against the running h
                t, h = t_end, max(h_next, h)
            else:
                t, h = t_new, h_next
        return y, h
