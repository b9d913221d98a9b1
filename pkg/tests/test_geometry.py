"""Tests for the Shrinker metric geometry, bridges and initial-surface residuals."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shrinkstack import balance, geometry
from shrinkstack.checks import geodesic_ratios

BASE = np.array([[0.0, 0.0], [1.5, 0.0], [0.3, -2.0], [3.0, 1.0], [-1.0, 1.0]])


@pytest.fixture(scope="module")
def surf_half_32():
    return geometry.prepare_surface(1, 32)


@pytest.fixture(scope="module")
def surf_half_64():
    return geometry.prepare_surface(1, 64)


class TestWeightedCurvature:
    def test_plane_through_origin(self):
        patch = geometry.graph_patch(lambda x, y: 0.0 * x)
        w = geometry.weighted_mean_curvature(patch, np.array([0.3, 2.0, -1.0]), np.array([1.0, -1.0, 0.5]), 1e-3)
        assert np.max(np.abs(w)) < 1e-12

    def test_sphere_radius_two(self):
        def patch(u, v):
            return 2.0 * np.stack([np.sin(u) * np.cos(v), np.sin(u) * np.sin(v), np.cos(u)], axis=-1)

        u, v = np.meshgrid(np.linspace(0.4, 2.7, 5), np.linspace(0.0, 6.0, 5))
        w, H, xn = geometry.weighted_mean_curvature(patch, u.ravel(), v.ravel(), 1e-3, parts=True)
        assert np.max(np.abs(w)) < 1e-8
        assert np.allclose(H, -1.0, atol=1e-8)
        assert np.allclose(xn, 2.0, atol=1e-12)

    def test_euclidean_catenoid_is_minimal(self):
        def patch(s, t):
            return np.stack([np.cosh(s) * np.cos(t), np.cosh(s) * np.sin(t), s], axis=-1)

        s = np.array([-1.0, 0.0, 0.5, 1.3])
        t = np.array([0.2, 1.0, 2.5, 4.0])
        w, H, xn = geometry.weighted_mean_curvature(patch, s, t, 1e-3, parts=True)
        assert np.max(np.abs(H)) < 1e-6
        assert np.allclose(w, 0.5 * xn, atol=1e-6)

    def test_rejects_bad_step(self):
        patch = geometry.graph_patch(lambda x, y: 0.0 * x)
        with pytest.raises(ValueError):
            geometry.weighted_mean_curvature(patch, np.array([0.0]), np.array([0.0]), 0.0)


class TestFermi:
    def test_normal_geodesic_at_origin_is_vertical(self):
        pt = geometry.fermi_map(np.zeros(2), np.zeros(2), 0.7)
        assert pt[0] == 0.0 and pt[1] == 0.0
        assert pt[2] > 0.7

    def test_zero_input_is_identity(self):
        pt = geometry.fermi_map(np.array([1.2, -0.4]), np.zeros(2), 0.0)
        assert np.array_equal(pt, [1.2, -0.4, 0.0])

    def test_speed_drift(self):
        assert geometry.fermi_speed_drift(BASE, np.full((5, 2), 0.05), np.full(5, 0.08)) < 1e-10

    def test_geodesic_defect_is_cubic(self):
        ratios = geodesic_ratios()
        # |defect| / s^3 stays bounded as s halves; rows are s, columns points
        assert np.all(np.isfinite(ratios))
        assert np.max(ratios[1:] / ratios[0]) < 2.0
        assert np.allclose(ratios[:, 0], 1.0 / 24.0, rtol=1e-2)

    @given(
        st.floats(-2.0, 2.0),
        st.floats(-2.0, 2.0),
        st.floats(-0.3, 0.3),
        st.floats(-0.3, 0.3),
    )
    def test_plane_log_inverts_exp(self, px, py, vx, vy):
        p = np.array([px, py])
        v = np.array([vx, vy])
        if np.hypot(vx, vy) < 1e-6:
            return
        x = geometry.fermi_map(p, v, 0.0)[:2]
        back = geometry.plane_log(p, x)[0]
        assert np.allclose(back, v, atol=1e-9 * max(1.0, np.hypot(vx, vy)))


class TestBridges:
    def test_untilted_waist_radius(self):
        spec = geometry.BridgeSpec(p=(1.0, 0.5), tau=1e-4)
        th = np.linspace(0.0, 2 * math.pi, 7)
        pts = geometry.catenoid_point(spec, np.zeros_like(th), th)
        rad = np.hypot(pts[:, 0] - 1.0, pts[:, 1] - 0.5)
        expect = spec.tau * math.exp(1.25 / 8.0)
        assert np.allclose(rad, expect, rtol=1e-6)

    def test_zero_kappa_has_no_tilt(self):
        spec = geometry.BridgeSpec(p=(1.0, 0.0), tau=1e-3, kappa=0.0)
        assert spec.tilt_slope == 0.0
        _, _, Z = geometry.catenoid_model(spec, np.array([0.5, 0.5]), np.array([0.0, math.pi]))
        assert Z[0] == Z[1]

    def test_elevation(self):
        spec = geometry.BridgeSpec(p=(1.0, 0.0), tau=1e-3, kappa_perp=2.0)
        _, _, Z = geometry.catenoid_model(spec, np.array([0.0]), np.array([0.0]))
        assert Z[0] == pytest.approx(2e-3)

    def test_chart_bound(self):
        spec = geometry.BridgeSpec(p=(1.0, 0.0), tau=1e-3)
        with pytest.raises(ValueError):
            geometry.catenoid_model(spec, np.array([spec.s_max + 0.1]), np.array([0.0]))

    def test_rejects_nonpositive_tau(self):
        with pytest.raises(ValueError):
            geometry.BridgeSpec(p=(1.0, 0.0), tau=0.0)

    def test_graph_matches_log_asymptotics(self):
        tau = 1e-6
        spec = geometry.BridgeSpec(p=(0.0, 0.0), tau=tau, h=0.0)
        rho = np.array([50 * tau, 200 * tau])
        z = geometry.catenoid_graph(spec, 1, rho, 0.0 * rho)
        assert np.allclose(z, tau * np.log(2 * rho / tau), rtol=1e-3)
        zl = geometry.catenoid_graph(spec, -1, rho, 0.0 * rho)
        assert np.allclose(zl, -z, rtol=1e-9)

    def test_graph_rejects_bad_sheet(self):
        spec = geometry.BridgeSpec(p=(0.0, 0.0), tau=1e-3)
        with pytest.raises(ValueError):
            geometry.catenoid_graph(spec, 0, np.array([0.1]), np.array([0.0]))


class TestSurface:
    def test_cone_slopes_match(self):
        data = geometry.prepare_surface(2, 64)
        rows = geometry.cone_slopes(data)
        assert len(rows) == 3
        for row in rows:
            if row["j"] == 0.0:
                assert abs(row["numeric"]) < 1e-9
            else:
                assert row["rel_diff"] < 0.02 and not row["flag"]

    def test_no_waist_scale_by_default(self, surf_half_32):
        assert surf_half_32.waist_scale == {}
        assert surf_half_32.group == "D_mh"

    def test_shrink_waists_records_scale(self):
        data = geometry.prepare_surface(3, 6, shrink_waists=True, tol=1e-5)
        assert data.waist_scale
        assert all(0.0 < s < 1.0 for s in data.waist_scale.values())

    def test_collision_without_shrinking(self):
        with pytest.raises(ValueError):
            geometry.prepare_surface(3, 6, tol=1e-5)

    @pytest.mark.slow
    def test_residuals_decay(self, surf_half_32, surf_half_64):
        a = geometry.residual_report(surf_half_32, include_annuli=False)
        b = geometry.residual_report(surf_half_64, include_annuli=False)
        assert b["graph"]["sup_over_tau"] < 1e-3
        assert b["graph"]["sup"] < a["graph"]["sup"]
        for rep in (a, b):
            assert rep["bridge_core"]["sup_ratio"] < 1.0
        assert b["bridge_core"]["sup"] < a["bridge_core"]["sup"]

    @pytest.mark.slow
    def test_obstruction_annulus_follows_design(self, surf_half_64):
        rep = geometry.residual_report(surf_half_64, include_bridges=False)
        assert rep["obstruction"]["sup_minus_w"] < surf_half_64.tau_max
        assert rep["gluing"]["blend_difference"] < surf_half_64.tau_max

    @pytest.mark.slow
    def test_gluing_annulus_bound(self, surf_half_32, surf_half_64):
        """Gluing-annulus residual against ``C tau^(1+alpha)`` with ``C = 10``.

        Measured constants are of order 1e4 to 1e5 and do not settle with
        ``m``; this records the shortfall rather than hiding it.
        """
        consts = []
        for data in (surf_half_32, surf_half_64):
            rep = geometry.residual_report(data, include_bridges=False)
            consts.append(rep["gluing"]["sup"] / data.tau_max ** (1 + balance.DEFAULT_ALPHA))
        assert max(consts) < 10.0, f"gluing constants {consts}"


@pytest.mark.parametrize("two_J,m", [(1, 64), (2, 64), (3, 96)])
def test_levels_are_ordered(two_J, m):
    data = geometry.prepare_surface(two_J, m)
    gaps = geometry.ordering_gaps(data)
    assert len(gaps) == two_J
    assert min(gaps.values()) > 16.0 / 9.0


def test_cone_slopes_antisymmetric():
    rows = geometry.cone_slopes(geometry.prepare_surface(3, 96))
    by_j = {r["j"]: r for r in rows}
    for j, row in by_j.items():
        assert row["closed"] == pytest.approx(-by_j[-j]["closed"], rel=1e-12)
        assert not row["flag"]
