import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rydplasma.fitting import fit_power_law, vertical_cut
from rydplasma.units import InvalidParameter


def test_exact_power_law_recovery():
    x = np.array([1.0, 2.0, 5.0, 10.0])
    fit = fit_power_law(x, 7.0 * x**-2.5)
    assert fit.exponent == pytest.approx(-2.5, abs=1e-12)
    assert fit.prefactor == pytest.approx(7.0, rel=1e-12)
    assert fit.stderr < 1e-10
    assert fit.window == (1.0, 10.0)
    assert len(fit.residuals) == 4


@given(st.floats(-9, 3), st.floats(0.01, 100))
def test_recovery_property(k, a):
    x = np.geomspace(0.5, 50, 6)
    fit = fit_power_law(x, a * x**k, a * x**k * 0.01)
    assert fit.exponent == pytest.approx(k, abs=1e-9)
    assert fit.prefactor == pytest.approx(a, rel=1e-8)


def test_flat_data_has_zero_exponent():
    rng = np.random.default_rng(0)
    x = np.geomspace(1, 100, 8)
    y = 3.0 * (1 + 0.01 * rng.standard_normal(8))
    fit = fit_power_law(x, y)
    assert abs(fit.exponent) <= 3 * fit.stderr + 1e-12


def test_weights_follow_relative_errors():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    y = x**-1.0
    y[3] *= 1.5  # outlier with a huge error bar
    fit = fit_power_law(x, y, [1e-4, 1e-4, 1e-4, 10.0])
    assert fit.exponent == pytest.approx(-1.0, abs=1e-3)


def test_invalid_inputs():
    with pytest.raises(InvalidParameter):
        fit_power_law([1, 2], [1, 2])
    with pytest.raises(InvalidParameter):
        fit_power_law([1, 2, 3], [1, -2, 3])
    with pytest.raises(InvalidParameter):
        fit_power_law([1, 2, 3], [1, 2, 3], [1, 0, 1])


def test_vertical_cut_recovers_n7():
    rho = np.geomspace(1e18, 1e20, 5)
    fits = {n: fit_power_law(rho, 1e12 / (rho * n**7)) for n in (4, 6, 8, 10)}
    cut = vertical_cut(fits, 1e19)
    assert cut.fit.exponent == pytest.approx(-7.0, abs=1e-9)
    assert cut.lifetimes[0] == pytest.approx(1e12 / (1e19 * 4**7))
    assert cut.warnings == []


def test_vertical_cut_single_n_and_extrapolation_warning():
    rho = np.geomspace(1e18, 1e19, 4)
    fits = {6: fit_power_law(rho, 1.0 / rho)}
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        cut = vertical_cut(fits, 1e21)
    assert cut.fit is None
    assert cut.lifetimes[0] == pytest.approx(1e-21)
    assert cut.warnings and any("extrapolation" in str(x.message) for x in w)
