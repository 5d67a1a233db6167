"""Power-law fits on log-log axes and constant-density cuts through them."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .units import InvalidParameter


@dataclass(frozen=True)
class PowerLawFit:
    """y = prefactor * x**exponent fitted on (ln x, ln y)."""

    exponent: float
    prefactor: float
    stderr: float
    prefactor_log_stderr: float
    window: tuple[float, float]
    residuals: tuple[float, ...] = field(default=())
    n_points: int = 0

    def __call__(self, x):
        return self.prefactor * np.asarray(x, dtype=float) ** self.exponent

    def inside(self, x) -> bool:
        lo, hi = self.window
        return lo * (1 - 1e-12) <= x <= hi * (1 + 1e-12)


def fit_power_law(xs: Sequence[float], ys: Sequence[float],
                  y_errs: Optional[Sequence[float]] = None) -> PowerLawFit:
    """Weighted least squares of ln y = ln A + k ln x.

    Weights are 1/(y_err/y)^2 when errors are given. The parameter errors are
    scaled by the reduced chi-square when there are spare degrees of freedom.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidParameter("xs and ys must be 1-d arrays of equal length")
    if len(x) < 3:
        raise InvalidParameter("a power-law fit needs at least three points")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(x * y)):
        raise InvalidParameter("power-law data must be positive and finite")
    lx, ly = np.log(x), np.log(y)
    if y_errs is None:
        sigma = np.ones_like(ly)
    else:
        e = np.asarray(y_errs, dtype=float)
        if e.shape != y.shape or np.any(e <= 0):
            raise InvalidParameter("y_errs must be positive and match ys")
        sigma = e / y
    A = np.column_stack([np.ones_like(lx), lx]) / sigma[:, None]
    b = ly / sigma
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = ly - (coef[0] + coef[1] * lx)
    cov = np.linalg.inv(A.T @ A)
    dof = len(x) - 2
    if dof > 0:
        chi2 = float(np.sum((resid / sigma) ** 2)) / dof
        cov = cov * chi2
    return PowerLawFit(exponent=float(coef[1]), prefactor=float(math.exp(coef[0])),
                       stderr=float(math.sqrt(max(cov[1, 1], 0.0))),
                       prefactor_log_stderr=float(math.sqrt(max(cov[0, 0], 0.0))),
                       window=(float(x.min()), float(x.max())),
                       residuals=tuple(float(r) for r in resid), n_points=len(x))


@dataclass
class VerticalCut:
    density: float
    ns: np.ndarray
    lifetimes: np.ndarray
    fit: Optional[PowerLawFit]
    warnings: list


def vertical_cut(fits: Mapping[int, PowerLawFit], density: float) -> VerticalCut:
    """Evaluate each n's tau(rho) fit at ``density`` and fit tau(n) when n >= 3 values."""
    if not fits:
        raise InvalidParameter("need at least one fit")
    ns = np.array(sorted(fits), dtype=float)
    taus = np.array([float(fits[int(n)](density)) for n in ns])
    notes = [f"n={int(n)}: density {density:.3g} outside fitted range "
             f"[{fits[int(n)].window[0]:.3g}, {fits[int(n)].window[1]:.3g}]"
             for n in ns if not fits[int(n)].inside(density)]
    for note in notes:
        warnings.warn("extrapolation: " + note, stacklevel=2)
    fit = fit_power_law(ns, taus) if len(ns) >= 3 else None
    return VerticalCut(density=density, ns=ns, lifetimes=taus, fit=fit, warnings=notes)
