import math

import numpy as np
import pytest

from wadg import bessel


def series_oracle(nu, x, terms=60):
    """Independent partial-sum evaluation with compensated summation."""
    vals = []
    z = -0.25 * x * x
    term = (0.5 * x) ** nu / math.factorial(nu)
    vals.append(term)
    for k in range(1, terms):
        term = term * z / (k * (k + nu))
        vals.append(term)
    return math.fsum(vals)


class TestAgainstMpmath:
    @pytest.mark.parametrize("nu,fn", [(0, bessel.j0), (1, bessel.j1)])
    def test_accuracy_working_interval(self, nu, fn):
        mpmath = pytest.importorskip("mpmath")
        xs = np.linspace(0.0, 12.0, 241)
        worst = max(abs(fn(float(x)) - float(mpmath.besselj(nu, float(x)))) for x in xs)
        assert worst < 1e-10

    @pytest.mark.parametrize("nu,fn", [(0, bessel.j0), (1, bessel.j1)])
    def test_accuracy_beyond_switch(self, nu, fn):
        mpmath = pytest.importorskip("mpmath")
        for x in (12.5, 15.0, 20.0, 40.0):
            assert abs(fn(x) - float(mpmath.besselj(nu, x))) < 1e-10


class TestAgainstSeries:
    @pytest.mark.parametrize("x", [0.3, 1.0, 2.5, 5.52, 9.0, 11.9])
    def test_j0(self, x):
        assert bessel.j0(x) == pytest.approx(series_oracle(0, x), abs=1e-12)

    @pytest.mark.parametrize("x", [0.3, 1.0, 2.5, 5.52, 9.0, 11.9])
    def test_j1(self, x):
        assert bessel.j1(x) == pytest.approx(series_oracle(1, x), abs=1e-12)


class TestStructure:
    def test_known_values(self):
        assert bessel.j0(0.0) == pytest.approx(1.0, abs=1e-15)
        assert bessel.j1(0.0) == pytest.approx(0.0, abs=1e-15)
        assert bessel.j0(bessel.J0_ZERO_2) == pytest.approx(0.0, abs=1e-10)

    def test_parity(self):
        x = np.linspace(0.1, 11, 23)
        assert np.allclose(bessel.j0(-x), bessel.j0(x), atol=1e-14)
        assert np.allclose(bessel.j1(-x), -bessel.j1(x), atol=1e-14)

    def test_derivative_identity(self):
        # J0' = -J1; finite differences limited by ~1e-13 series rounding / h
        x = np.linspace(0.2, 11.5, 37)
        h = 1e-5
        fd = (bessel.j0(x + h) - bessel.j0(x - h)) / (2 * h)
        assert np.max(np.abs(fd + bessel.j1(x))) < 1e-6

    def test_vector_and_scalar(self):
        assert np.isscalar(bessel.j0(1.0)) or bessel.j0(1.0).ndim == 0
        assert bessel.j0(np.ones(4)).shape == (4,)
