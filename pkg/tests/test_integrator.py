import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rydplasma.integrator import CashKarp, IntegrationFailure, IntegratorConfig


def test_exponential_decay_to_tolerance():
    ck = CashKarp(lambda t, y: -y, IntegratorConfig(rtol=1e-10, atol=1e-12))
    y, _ = ck.advance(0.0, np.array([1.0]), 5.0)
    assert y[0] == pytest.approx(math.exp(-5.0), rel=1e-8)


def test_fifth_order_convergence_of_fixed_steps():
    # error of one step scales as h^5 for the embedded 5th-order solution (local error h^6)
    ck = CashKarp(lambda t, y: np.array([y[1], -y[0]]), IntegratorConfig())
    errs = []
    for h in (0.2, 0.1):
        y5, _ = ck.attempt(0.0, np.array([1.0, 0.0]), h)
        errs.append(abs(y5[0] - math.cos(h)))
    assert math.log2(errs[0] / errs[1]) > 5.5


@given(st.floats(0.1, 10.0))
def test_harmonic_oscillator_energy(omega):
    rhs = lambda t, y: np.array([y[1], -omega**2 * y[0]])
    ck = CashKarp(rhs, IntegratorConfig(rtol=1e-10, atol=1e-10))
    y, _ = ck.advance(0.0, np.array([1.0, 0.0]), 10.0 / omega)
    assert y[0] == pytest.approx(math.cos(10.0), abs=1e-7)
    e = 0.5 * y[1] ** 2 + 0.5 * omega**2 * y[0] ** 2
    assert e == pytest.approx(0.5 * omega**2, rel=1e-7)


def test_lands_exactly_on_end_time():
    ck = CashKarp(lambda t, y: np.ones_like(y), IntegratorConfig())
    y, _ = ck.advance(0.0, np.zeros(1), 0.37)
    assert y[0] == pytest.approx(0.37, rel=1e-14)


def test_failure_on_blow_up():
    ck = CashKarp(lambda t, y: y**3, IntegratorConfig(rtol=1e-8, atol=1e-8, min_step=1e-6))
    with pytest.raises(IntegrationFailure):
        ck.advance(0.0, np.array([1.0]), 1.0)


def test_invalid_tolerances():
    with pytest.raises(ValueError):
        IntegratorConfig(rtol=0.0)
