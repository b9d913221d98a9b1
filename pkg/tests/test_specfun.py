import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shrinkstack import specfun


def rel(a, b):
    return abs(a - b) / abs(b)


class TestGamma:
    def test_half(self):
        assert specfun.gamma_fn(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-15)

    def test_minus_half(self):
        assert specfun.gamma_fn(-0.5) == pytest.approx(-2.0 * math.sqrt(math.pi), rel=1e-15)

    @pytest.mark.parametrize("x", [0.0, -1.0, -7.0])
    def test_poles(self, x):
        with pytest.raises(ValueError):
            specfun.gamma_fn(x)

    @given(st.floats(0.05, 30.0))
    def test_recurrence(self, x):
        assert specfun.gamma_fn(x + 1) == pytest.approx(x * specfun.gamma_fn(x), rel=1e-13)


class TestKummer:
    @pytest.mark.parametrize(
        "a,b,x",
        [(-0.5, 1.0, 0.0), (-0.5, 1.0, 1e-3), (-0.5, 1.0, 3.0), (-0.5, 1.0, 80.0), (0.5, 2.0, 45.0),
         (3.5, 1.0, 12.0), (-3.5, 5.0, 7.0), (12.0, 13.0, 100.0), (1.0, 1.0, 2.0)],
    )
    def test_against_mpmath(self, a, b, x):
        v, d = specfun.kummer_m(a, b, x)
        assert v == pytest.approx(float(mpmath.hyp1f1(a, b, x)), rel=1e-12, abs=1e-300)
        dref = float(mpmath.diff(lambda t: mpmath.hyp1f1(a, b, t), x)) if x > 0 else a / b
        assert d == pytest.approx(dref, rel=1e-10, abs=1e-12)

    def test_zero_argument(self):
        assert specfun.kummer_m(2.3, 1.7, 0.0) == (1.0, pytest.approx(2.3 / 1.7))

    def test_invalid(self):
        with pytest.raises(ValueError):
            specfun.kummer_m(1.0, -2.0, 1.0)
        with pytest.raises(ValueError):
            specfun.kummer_m(1.0, 1.0, -1.0)

    def test_overflow(self):
        with pytest.raises(OverflowError):
            specfun.kummer_m(1.0, 1.0, 800.0)

    @given(st.floats(-3.0, 3.0), st.floats(0.5, 4.0), st.floats(0.0, 30.0))
    def test_kummer_transformation(self, a, b, x):
        # M(a, b, x) = e^x M(b - a, b, -x) is checked through mpmath on the right
        v, _ = specfun.kummer_m(a, b, x)
        ref = float(mpmath.exp(x) * mpmath.hyp1f1(b - a, b, -x))
        assert v == pytest.approx(ref, rel=1e-9, abs=1e-12 * math.exp(x))

    @given(st.floats(0.0, 600.0))
    def test_half_closed_form(self, x):
        v, d = specfun.kummer_m_half(np.array([x]))
        v2, d2 = specfun.kummer_m(-0.5, 1.0, x)
        assert v[0] == pytest.approx(v2, rel=1e-11, abs=1e-12)
        assert d[0] == pytest.approx(d2, rel=1e-11)


class TestTricomi:
    @pytest.mark.parametrize(
        "a,b,x",
        [(-0.5, 1.0, 1e-4), (-0.5, 1.0, 2.0), (-0.5, 1.0, 300.0), (0.5, 1.0, 0.7), (2.5, 1.0, 0.3),
         (3.5, 4.5, 15.0), (-2.5, 2.0, 7.0), (-4.5, 1.0, 3.0), (6.0, 7.0, 20.0)],
    )
    def test_against_mpmath(self, a, b, x):
        v, d = specfun.tricomi_u(a, b, x)
        assert v == pytest.approx(float(mpmath.hyperu(a, b, x)), rel=1e-11)
        assert d == pytest.approx(float(mpmath.diff(lambda t: mpmath.hyperu(a, b, t), x)), rel=1e-9)

    def test_invalid(self):
        with pytest.raises(ValueError):
            specfun.tricomi_u(1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            specfun.tricomi_u(1.0, -1.0, 1.0)

    @given(st.floats(0.5, 4.0), st.floats(0.5, 3.0), st.floats(0.2, 40.0))
    def test_recurrence(self, a, b, x):
        # U(a-1) - (x + 2a - b) U(a) + a (a - b + 1) U(a+1) = 0
        um, u0, up = (specfun.tricomi_u(t, b, x)[0] for t in (a - 1, a, a + 1))
        scale = abs(um) + abs((x + 2 * a - b) * u0) + abs(a * (a - b + 1) * up)
        assert abs(um - (x + 2 * a - b) * u0 + a * (a - b + 1) * up) <= 1e-10 * scale

    @given(st.floats(1e-3, 700.0))
    def test_half_closed_form(self, x):
        v, d = specfun.tricomi_u_half(np.array([x]))
        ref = mpmath.hyperu(-0.5, 1, x)
        assert v[0] == pytest.approx(float(ref), rel=1e-12)

    @given(st.floats(0.05, 40.0))
    def test_wronskian_half(self, x):
        # W_x[M, U] = -Gamma(b) x^{-b} e^x / Gamma(a)
        m, dm = specfun.kummer_m(-0.5, 1.0, x)
        u, du = specfun.tricomi_u(-0.5, 1.0, x)
        ref = -math.exp(x) / (x * specfun.gamma_fn(-0.5))
        assert m * du - u * dm == pytest.approx(ref, rel=1e-11)
