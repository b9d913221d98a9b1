import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shrinkstack import rld

RT = rld.find_roots()


class TestBasis:
    def test_small_r_log_coefficient(self):
        # phi_u = (1/sqrt(pi)) log r + O(1) as r -> 0
        r1, r2 = 1e-6, 1e-8
        (_, _), (u1, _) = rld.basis0(np.array([r1]))
        (_, _), (u2, _) = rld.basis0(np.array([r2]))
        slope = (u1[0] - u2[0]) / math.log(r1 / r2)
        assert slope == pytest.approx(1.0 / math.sqrt(math.pi), rel=1e-6)

    def test_phi_m_at_origin(self):
        (m0, m1), _ = rld.basis0(np.array([1e-12]))
        assert m0[0] == pytest.approx(1.0)
        assert abs(m1[0]) < 1e-10

    @given(st.floats(0.05, 20.0))
    def test_ode(self, r):
        pm, pu = rld.basis0(np.array([r]), order=2)
        for f in (pm, pu):
            t = (f[2][0], (1.0 / r - 0.5 * r) * f[1][0], 0.5 * f[0][0])
            assert abs(sum(t)) <= 1e-11 * sum(abs(v) for v in t)

    @pytest.mark.parametrize("k", [0, 1, 2, 3])
    def test_wronskian_grid(self, k):
        basis = rld.phi_mu_basis(k)
        for r in np.linspace(0.1, 10.0, 200):
            assert basis.wronskian_numeric(r) == pytest.approx(basis.wronskian(r), rel=1e-8)

    def test_wronskian_k0_form(self):
        basis = rld.phi_mu_basis(0)
        r = 1.7
        assert basis.wronskian(r) == pytest.approx(math.exp(r * r / 4) / (math.sqrt(math.pi) * r), rel=1e-14)

    def test_basis_k_against_mpmath(self):
        basis = rld.phi_mu_basis(2)
        r = 3.0
        assert basis.eval_m(r)[0] == pytest.approx(float(mpmath.hyp1f1(3.5, 1, r * r / 4)), rel=1e-12)
        assert basis.eval_u(r)[0] == pytest.approx(float(mpmath.hyperu(3.5, 1, r * r / 4)), rel=1e-11)

    @pytest.mark.parametrize("k", [-1, 51, 1.5])
    def test_invalid_k(self, k):
        with pytest.raises(ValueError):
            rld.phi_mu_basis(k)


class TestRoots:
    def test_values(self):
        assert RT.r_m == pytest.approx(2.51, abs=0.01)
        assert RT.r_u == pytest.approx(0.88, abs=0.01)
        assert RT.r_mu == pytest.approx(1.52, abs=0.01)

    def test_are_zeros(self):
        (m0, _), _ = rld.basis0(np.array([RT.r_m]))
        _, (u0, _) = rld.basis0(np.array([RT.r_u]))
        assert abs(m0[0]) < 1e-13 and abs(u0[0]) < 1e-13
        assert abs(rld.h_hat(RT.r_mu)) < 1e-14

    def test_ordering(self):
        assert RT.r_u < RT.r_mu < RT.r_m

    def test_h_hat_monotone_on_window(self):
        lo, hi = rld.admissible_window()
        vals = rld.h_hat(np.linspace(lo, hi, 200))
        assert np.all(np.diff(vals) < 0)

    @given(st.floats(-0.05, 0.05))
    def test_h_hat_inverse(self, y):
        lo, hi = rld.admissible_window()
        if not (rld.h_hat(hi) <= y <= rld.h_hat(lo)):
            with pytest.raises(ValueError):
                rld.h_hat_inv(y)
            return
        assert rld.h_hat(rld.h_hat_inv(y)) == pytest.approx(y, abs=1e-13)


class TestProfiles:
    def test_avg_profile_jump(self):
        rb, m = RT.r_mu, 16
        prof = rld.avg_profile(rb, m)
        e = math.exp(rb * rb / 8)
        assert prof.evaluate(rb)[0] == pytest.approx(rld.phi_one(rb, m) * e, rel=1e-13)
        assert prof.jump_deriv == pytest.approx(m * e / rb, rel=1e-12)
        assert prof.ode_residual() < 1e-12

    def test_avg_profile_inside_outside_shape(self):
        rb = RT.r_mu
        prof = rld.avg_profile(rb, 8)
        assert prof.coef_in[1] == 0.0 and prof.coef_out[0] == 0.0

    @given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
    def test_phibar_data(self, a, b):
        rb = RT.r_mu
        prof = rld.solve_phibar(a, b, rb)
        v, d = prof.evaluate(rb)[:2]
        e = math.exp(rb * rb / 8)
        assert v == pytest.approx(e * a, abs=1e-12)
        # weighted derivative: (d/dr)(e^{omega} u) e^{-omega}... data is u' - (r/4) u = e^{r^2/8} b
        assert d - 0.25 * rb * v == pytest.approx(e * b, abs=1e-11)

    def test_jbar_kink(self):
        rb = RT.r_mu
        prof = rld.solve_jbar(0.7, rb)
        assert abs(prof.evaluate(rb)[0]) < 1e-14
        e = math.exp(rb * rb / 8)
        assert prof.jump_deriv == pytest.approx(2 * 0.7 * e, rel=1e-12)

    def test_decomposition(self):
        # avg = phibar[phi_1, m h_hat] + jbar[m/r_bar]-type kink, compared on coefficients
        rb, m = 1.45, 32
        avg = rld.avg_profile(rb, m)
        pb = rld.solve_phibar(rld.phi_one(rb, m), m * rld.h_hat(rb), rb)
        rest = avg + pb.scaled(-1.0)
        assert abs(rest.evaluate(rb)[0]) < 1e-10 * abs(avg.evaluate(rb)[0])

    def test_centre_outside(self):
        with pytest.raises(ValueError):
            rld.avg_profile(3.0, 8)

    def test_average_finite_at_origin(self):
        prof = rld.avg_profile(RT.r_mu, 8)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = prof.evaluate(np.array([0.0]))[0]
        assert np.isfinite(v).all()
        assert v[0] == pytest.approx(prof.coef_in[0])

    def test_csv(self, tmp_path):
        prof = rld.avg_profile(RT.r_mu, 8)
        prof.to_csv(tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0] == "r,value,deriv" and len(lines) == len(prof.r_grid) + 1
