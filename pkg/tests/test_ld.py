import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shrinkstack import checks, ld, rld

RMU = rld.find_roots().r_mu


@pytest.fixture(scope="module")
def sol16():
    return ld.build_ld(ld.SingularLattice(0, RMU, 16), None, 1.0, 0.0)


@pytest.fixture(scope="module")
def pair16():
    return ld.build_ld(ld.SingularLattice(0, RMU, 16), ld.SingularLattice(1, 1.45, 16), 0.01, 0.012)


class TestCutoff:
    @given(st.floats(-2.0, 2.0))
    def test_psi_symmetry(self, t):
        assert ld.Psi(-t) == pytest.approx(1.0 - ld.Psi(t), abs=1e-15)

    def test_psi_plateaus(self):
        assert ld.Psi(-1.0) == 0.0 and ld.Psi(1.0) == 1.0 and ld.Psi(0.0) == 0.5

    def test_cutoff_endpoints(self):
        assert ld.cutoff(2.0, 3.0, 2.0) == 0.0
        assert ld.cutoff(2.0, 3.0, 3.0) == 1.0
        assert ld.cutoff(3.0, 2.0, 2.0) == 1.0

    def test_cutoff_degenerate(self):
        with pytest.raises(ValueError):
            ld.cutoff(1.0, 1.0, 0.5)

    @given(st.floats(2.05, 2.95))
    def test_cutoff_derivatives(self, t):
        h = 1e-5
        p, d1, d2 = ld.cutoff_derivatives(2.0, 3.0, t)
        f = lambda s: ld.cutoff(2.0, 3.0, s)  # noqa: E731
        assert d1 == pytest.approx((f(t + h) - f(t - h)) / (2 * h), rel=1e-5, abs=1e-8)
        assert d2 == pytest.approx((f(t + h) - 2 * f(t) + f(t - h)) / h**2, rel=1e-3, abs=1e-4)


class TestLattice:
    def test_points(self):
        lat = ld.SingularLattice(1, 1.5, 4)
        pts = lat.points()
        assert pts.shape == (4, 2)
        assert np.allclose(np.hypot(*pts.T), 1.5)
        assert math.atan2(pts[0, 1], pts[0, 0]) == pytest.approx(math.pi / 4)

    def test_invalid(self):
        with pytest.raises(ValueError):
            ld.SingularLattice(2, 1.5, 4)
        with pytest.raises(ValueError):
            ld.SingularLattice(0, 1.5, 1)
        with pytest.raises(ValueError):
            ld.SingularLattice(0, 0.5, 8).check_admissible()


class TestLdSolution:
    def test_requires_lattice(self):
        with pytest.raises(ValueError):
            ld.build_ld(None, None, 1.0, 1.0)

    def test_operator_vanishes(self, sol16):
        pts = np.array([[0.7, 0.1], [1.3, 0.05], [1.6, 0.12], [2.4, -0.3], [4.0, 1.0]])
        f = lambda x, y: ld.eval_xy(sol16, x, y)  # noqa: E731
        val, scale = ld.jacobi_operator_fd(f, pts[:, 0], pts[:, 1], h=2e-3)
        assert np.all(np.abs(val) < 1e-6 * np.maximum(scale, 1.0))

    def test_log_singularity(self, sol16):
        # e^omega Phi - log|q - p| stays bounded as q -> p
        p = np.array([RMU, 0.0])
        vals = []
        for eps in (1e-3, 1e-4, 1e-5):
            q = p + eps * np.array([0.6, 0.8])
            w = math.exp(-float(q @ q) / 8)
            vals.append(w * float(ld.eval_xy(sol16, *q)) - math.log(eps))
        assert abs(vals[2] - vals[1]) < 1e-3 and abs(vals[1] - vals[0]) < 1e-2

    @given(st.floats(0.3, 4.0), st.floats(0.0, 2 * math.pi))
    def test_dihedral_symmetry(self, r, th):
        sol = ld.build_ld(ld.SingularLattice(0, RMU, 8), None, 1.0, 0.0)
        base = ld.eval_ld(sol, r, th) if abs(r - RMU) > 1e-3 else None
        if base is None:
            return
        assert ld.eval_ld(sol, r, th + 2 * math.pi / 8) == pytest.approx(base, rel=1e-10, abs=1e-10)
        assert ld.eval_ld(sol, r, -th) == pytest.approx(base, rel=1e-10, abs=1e-10)

    def test_far_field_mode0(self, sol16):
        r = 50.0
        full = ld.eval_ld(sol16, r, 0.3)
        avg = sol16.avg(np.array([r]))[0]
        assert full == pytest.approx(avg, rel=1e-6)

    def test_antipodal_midpoint(self, sol16):
        a = ld.eval_ld(sol16, RMU, math.pi / 16)
        b = ld.eval_ld(sol16, RMU, -math.pi / 16 + 2 * math.pi)
        assert np.isfinite(a) and a == pytest.approx(b, rel=1e-12)

    def test_singular_point_rejected(self, sol16):
        with pytest.raises(ValueError):
            ld.eval_xy(sol16, RMU, 0.0)

    def test_mode0_oracle(self):
        assert checks.mode0_error(16, RMU) < 1e-9

    def test_mode_table(self, sol16, tmp_path):
        rows = sol16.mode_table()
        assert len(rows) == sol16.n_modes
        assert [r[2] for r in rows[:3]] == [16, 32, 48]
        sol16.mode_table_csv(tmp_path / "modes.csv")
        assert (tmp_path / "modes.csv").read_text().startswith("sign,n,k,amplitude")

    def test_modes_converged(self):
        a = ld.build_ld(ld.SingularLattice(0, RMU, 16), None, 1.0, 0.0, n_modes=24)
        b = ld.build_ld(ld.SingularLattice(0, RMU, 16), None, 1.0, 0.0, n_modes=48)
        x = np.array([1.4, 1.55, 2.0])
        y = np.array([0.02, 0.1, 0.3])
        assert np.allclose(ld.eval_xy(a, x, y), ld.eval_xy(b, x, y), rtol=0, atol=1e-9)


class TestCylinder:
    def test_green_values(self):
        assert ld.green_cyl(0.0, math.pi) == pytest.approx(math.log(2.0))
        h = 1e-4
        g = lambda s: ld.green_cyl(s, math.pi)  # noqa: E731
        assert abs((g(h) - g(-h)) / (2 * h)) < 1e-10
        assert (g(h) - 2 * g(0.0) + g(-h)) / h**2 == pytest.approx(0.25, rel=1e-6)

    def test_green_singular(self):
        with pytest.raises(ValueError):
            ld.green_cyl(0.0, 2 * math.pi * 0)

    def test_limit_decreases(self):
        errs = [ld.cylinder_limit_error(m) for m in (16, 32, 64)]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 1e-3


class TestMismatch:
    def test_extraction_matches_oracle(self, pair16):
        a = ld.extract_affine(pair16, "plus", 0, 0.0)
        b = ld.affine_exact(pair16, "plus", 0, 0.0)
        assert a.mu == pytest.approx(b.mu, abs=1e-8)
        assert a.mu_prime == pytest.approx(b.mu_prime, abs=1e-6)
        assert abs(a.theta_component) < 1e-6

    def test_all_points_agree(self, pair16):
        mus = [ld.extract_affine(pair16, "minus", i, 0.0).mu for i in (0, 5, 11)]
        assert np.ptp(mus) < 1e-9

    def test_h_shifts_mu(self, pair16):
        a = ld.extract_affine(pair16, "plus", 0, 0.0)
        b = ld.extract_affine(pair16, "plus", 0, 0.001)
        assert a.mu - b.mu == pytest.approx(0.001 / 0.01, rel=1e-12)

    def test_dislocation(self):
        # (1/m) d_r(e^omega Phi) at the other family changes by -dr/(4 r^2)
        rel_err = []
        for m in (64, 128):
            q = RMU * np.array([math.cos(math.pi / m), math.sin(math.pi / m)])
            er = q / RMU

            def slope(rc):
                sol = ld.build_ld(ld.SingularLattice(0, rc, m), None, 1.0, 0.0)
                h = 1e-5
                f = lambda t: math.exp(-((RMU + t) ** 2) / 8) * float(ld.eval_xy(sol, *(q + t * er)))  # noqa: E731
                return (f(h) - f(-h)) / (2 * h) / m

            change = 0.5 * (slope(RMU + 1.0 / m) - slope(RMU - 1.0 / m))
            rel_err.append(abs(change / (-1.0 / (4 * RMU**2)) - 1.0))
        assert rel_err[0] < 0.25 and rel_err[1] < rel_err[0]


class TestObstruction:
    def test_support_and_operator(self):
        lat = ld.SingularLattice(0, RMU, 16)
        ob = ld.obstruction_fns(lat)
        p = lat.points()[0]
        d = ob.delta
        assert ob.V(p[0] + 0.5 * d, p[1]) == pytest.approx(
            float(rld.solve_phibar(1.0, 0.0, RMU).evaluate(p[0] + 0.5 * d)[0])
        )
        assert ob.V(p[0] + 2.5 * d, p[1]) == 0.0
        assert ob.W(p[0] + 0.5 * d, p[1]) == pytest.approx(0.0, abs=1e-9)
        # W = L V on the transition annulus
        x = p[0] + np.array([1.3, 1.5, 1.7]) * d
        y = p[1] + np.array([0.1, -0.2, 0.3]) * d
        lv, _ = ld.jacobi_operator_fd(ob.V, x, y, h=d / 200)
        assert np.allclose(lv, ob.W(x, y), rtol=1e-4, atol=1e-4 * np.max(np.abs(lv)))
        lv1, _ = ld.jacobi_operator_fd(ob.V_prime, x, y, h=d / 200)
        assert np.allclose(lv1, ob.W_prime(x, y), rtol=1e-4, atol=1e-4 * np.max(np.abs(lv1)))
