import math

import numpy as np
import pytest

from kmstat.errors import DivergentIntegral, QuadratureFailure
from kmstat.quadrature import (gauss_legendre_rule, integrate, integrate_batch,
                               integrate_tail, integrate_to_infinity)


def test_smooth_integral():
    assert integrate(np.sin, 0.0, math.pi) == pytest.approx(2.0, abs=1e-13)


def test_reversed_limits_change_sign():
    assert integrate(np.exp, 1.0, 0.0) == pytest.approx(-(math.e - 1.0), rel=1e-12)


def test_endpoint_singularities():
    assert integrate(lambda v: -np.log1p(-v), 0.0, 1.0) == pytest.approx(1.0, abs=1e-9)
    assert integrate(lambda x: x ** -0.5, 0.0, 1.0) == pytest.approx(2.0, abs=1e-8)


def test_breakpoint_handles_kink():
    val = integrate(lambda x: np.abs(x - 0.3), 0.0, 1.0, breaks=(0.3,))
    assert val == pytest.approx(0.5 * (0.3 ** 2 + 0.7 ** 2), abs=1e-14)


def test_batch_matches_individual_integrals():
    rates = np.array([0.5, 1.0, 3.0])
    vals, errs = integrate_batch(lambda x, i: np.exp(-rates[i] * x), np.zeros(3), np.full(3, 2.0))
    np.testing.assert_allclose(vals, (1 - np.exp(-2 * rates)) / rates, rtol=1e-12)
    assert np.all(errs >= 0)


def test_nonfinite_integrand_raises():
    with pytest.raises(QuadratureFailure):
        integrate(lambda x: np.where(x > 0.5, np.nan, 1.0), 0.0, 1.0)


def test_tail_convergent_and_divergent():
    assert integrate_to_infinity(lambda x: np.exp(-x / 2), 0.0, 1.0) == pytest.approx(2.0, rel=1e-8)
    assert integrate_to_infinity(lambda x: 1.0 / (1.0 + x) ** 2, 0.0, 1.0) == pytest.approx(1.0, rel=1e-6)
    with pytest.raises(DivergentIntegral) as exc:
        integrate_to_infinity(lambda x: 1.0 / (1.0 + x), 0.0, 1.0)
    assert len(exc.value.increments) >= 6


def test_growing_tail_reports_increasing_evidence():
    res = integrate_tail(lambda x: np.exp(x / 2), 0.0, 1.0)
    assert not res.finite[0]
    ev = res.evidence(0)
    assert ev[-1] > ev[0]


def test_zero_integrand_settles():
    res = integrate_tail(lambda x: np.zeros_like(x), 0.0, 1.0)
    assert res.finite[0] and res.values[0] == 0.0


def test_rule_on_unit_interval():
    x, w = gauss_legendre_rule(5)
    assert w.sum() == pytest.approx(1.0)
    assert np.dot(w, x ** 9) == pytest.approx(0.1, abs=1e-14)
