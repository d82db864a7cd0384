"""Model-set construction and projection onto the constraint coefficients."""

import itertools

import numpy as np
import pytest
from scipy.stats import chi2 as scipy_chi2

from rssa.bounds import (
    analytic_segway_ellipsoid,
    build_bound,
    build_ellipsoid_bound,
    build_polytope_bound,
    chi2_quantile,
    compute_c,
    estimate_constant_residual_bound,
    lie_projection_matrix,
    mean_model_bound,
    project_to_lie,
    with_c,
)
from rssa.core import EllipsoidSet, LieDerivativeBounds, PolytopeSet
from rssa.dynamics import make_model, sample_dynamics
from rssa.safety_index import SCARA_LEARNED, grad_phi_smooth


class TestChiSquareQuantile:
    def test_reference_values(self):
        assert chi2_quantile(1, 0.95) == pytest.approx(3.841458820694124,
                                                       abs=1e-6)
        assert chi2_quantile(2, 0.95) == pytest.approx(5.991464547107979,
                                                       abs=1e-6)

    def test_matches_scipy_across_dims_and_levels(self):
        for d in (1, 2, 4, 8, 16):
            for p in (0.5, 0.9, 0.95, 0.99):
                assert chi2_quantile(d, p) == pytest.approx(
                    float(scipy_chi2.ppf(p, d)), abs=1e-6)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            chi2_quantile(2, 0.0)
        with pytest.raises(ValueError):
            chi2_quantile(2, 1.0)
        with pytest.raises(ValueError):
            chi2_quantile(0, 0.5)


class TestSampleBounds:
    def test_polytope_keeps_every_sample_as_vertex(self, scara):
        state = np.array([0.3, 0.2, 0.5, -0.4])
        samples = sample_dynamics(scara, state, seed=0, count=10)
        bound = build_polytope_bound(samples)
        assert bound.kind == "polytope"
        assert bound.sigma_f.vertices.shape == (10, 4)
        assert bound.sigma_g.vertices.shape == (10, 8)
        for k, sample in enumerate(samples):
            assert np.array_equal(bound.sigma_f.vertices[k], sample.f)
            assert np.array_equal(bound.sigma_g.vertices[k], sample.g_flat)

    def test_polytope_rejects_empty(self):
        with pytest.raises(ValueError):
            build_polytope_bound([])

    def test_ellipsoid_needs_two_samples(self, scara):
        state = np.zeros(4)
        samples = sample_dynamics(scara, state, seed=0, count=1)
        with pytest.raises(ValueError):
            build_ellipsoid_bound(samples)

    def test_ellipsoid_center_and_dof(self, scara):
        state = np.array([0.1, -0.2, 0.3, 0.4])
        samples = sample_dynamics(scara, state, seed=1, count=50)
        bound = build_ellipsoid_bound(samples, confidence=0.95)
        f_mat = np.array([s.f for s in samples])
        assert np.allclose(bound.sigma_f.mu, f_mat.mean(axis=0))
        assert bound.sigma_f.dof == pytest.approx(chi2_quantile(4, 0.95))
        assert bound.sigma_g.dof == pytest.approx(chi2_quantile(8, 0.95))

    def test_mean_model_is_singleton_with_margin(self, scara):
        state = np.array([0.1, -0.2, 0.3, 0.4])
        samples = sample_dynamics(scara, state, seed=1, count=20)
        bound = mean_model_bound(samples, d_res=1.25)
        assert bound.kind == "constant"
        assert bound.d_res == 1.25
        assert bound.sigma_f.vertices.shape == (1, 4)
        assert np.allclose(bound.sigma_f.vertices[0],
                           np.mean([s.f for s in samples], axis=0))


class TestAnalyticSegwayEllipsoid:
    def test_rejects_other_robots(self, scara):
        with pytest.raises(ValueError):
            analytic_segway_ellipsoid(scara, np.zeros(4))

    def test_membership_thresholds_at_confidence_radius(self, segway):
        state = np.array([0.0, 0.04, 0.6, -0.2])
        bound = analytic_segway_ellipsoid(segway, state, confidence=0.95)
        dist = segway.km_dist
        radius = np.sqrt(chi2_quantile(1, 0.95))  # about 1.96 sd
        inside = segway.dynamics(state, dist.mean + 0.99 * radius * dist.sd)
        outside = segway.dynamics(state, dist.mean + 1.01 * radius * dist.sd)
        assert bound.sigma_f.contains(inside.f, tol=1e-6)
        assert not bound.sigma_f.contains(outside.f, tol=1e-6)
        assert bound.sigma_g.contains(inside.g_flat, tol=1e-6)
        assert not bound.sigma_g.contains(outside.g_flat, tol=1e-6)


class TestLieProjection:
    def test_projection_matrix_reproduces_row_product(self):
        rng = np.random.default_rng(0)
        grad = rng.normal(size=4)
        g = rng.normal(size=(4, 2))
        t = lie_projection_matrix(grad, 2)
        assert t.shape == (2, 8)
        assert np.allclose(t @ g.reshape(-1), grad @ g, atol=1e-12)

    def test_polytope_projection_maps_vertices(self, scara):
        state = np.array([0.2, 0.1, -0.3, 0.5])
        samples = sample_dynamics(scara, state, seed=2, count=8)
        bound = build_polytope_bound(samples)
        grad = grad_phi_smooth(SCARA_LEARNED, scara, state)
        lie = project_to_lie(bound, grad, m=2)
        assert isinstance(lie.v_f, PolytopeSet)
        for k, sample in enumerate(samples):
            assert lie.v_f.vertices[k, 0] == pytest.approx(
                float(grad @ sample.f), abs=1e-12)
            assert np.allclose(lie.v_g.vertices[k], grad @ sample.g,
                               atol=1e-12)

    def test_ellipsoid_projection_preserves_support(self, scara):
        state = np.array([0.2, 0.1, -0.3, 0.5])
        samples = sample_dynamics(scara, state, seed=3, count=50)
        bound = build_ellipsoid_bound(samples)
        grad = grad_phi_smooth(SCARA_LEARNED, scara, state)
        lie = project_to_lie(bound, grad, m=2)
        assert isinstance(lie.v_g, EllipsoidSet)
        t = lie_projection_matrix(grad, 2)
        rng = np.random.default_rng(4)
        for _ in range(10):
            w = rng.normal(size=2)
            image = lie.v_g.support(w)
            preimage = bound.sigma_g.support(t.T @ w)
            assert image == pytest.approx(preimage, rel=1e-4, abs=1e-6)
        assert lie.v_f.support(np.ones(1)) == pytest.approx(
            bound.sigma_f.support(grad), rel=1e-4, abs=1e-6)


class TestConstraintRightHandSide:
    def test_polytope_drift_uses_vertex_max(self):
        v_f = PolytopeSet(np.array([[-1.0], [3.0]]))
        v_g = PolytopeSet(np.array([[1.0, 0.0]]))
        lie = LieDerivativeBounds(v_f, v_g)
        c = compute_c(lie, phi_value=0.25, gamma_fn=lambda t: 2.0 * t)
        assert c == pytest.approx(-0.5 - 3.0)

    def test_ellipsoid_drift_uses_support(self):
        v_f = EllipsoidSet(np.array([0.0]), np.array([[1.0]]), dof=4.0)
        v_g = EllipsoidSet(np.zeros(2), np.eye(2), dof=1.0)
        lie = LieDerivativeBounds(v_f, v_g)
        c = compute_c(lie, phi_value=0.25, gamma_fn=lambda t: 2.0 * t)
        assert c == pytest.approx(-0.5 - 2.0)

    def test_residual_margin_tightens_c(self):
        v_f = PolytopeSet(np.array([[1.0]]))
        v_g = PolytopeSet(np.array([[1.0, 0.0]]))
        lie = LieDerivativeBounds(v_f, v_g)
        base = compute_c(lie, 0.0, lambda t: t)
        tight = compute_c(lie, 0.0, lambda t: t, d_res=0.7)
        assert tight == pytest.approx(base - 0.7)

    def test_with_c_fills_field_only(self):
        v_f = PolytopeSet(np.array([[2.0]]))
        v_g = PolytopeSet(np.array([[1.0, 0.0]]))
        lie = LieDerivativeBounds(v_f, v_g)
        assert np.isnan(lie.c)
        filled = with_c(lie, 0.5, lambda t: t)
        assert filled.c == pytest.approx(-0.5 - 2.0)
        assert filled.v_f is lie.v_f and filled.v_g is lie.v_g


class TestConstantResidualCap:
    def test_matches_brute_force(self, scara):
        rng = np.random.default_rng(5)
        states = rng.uniform(-0.8, 0.8, size=(4, 4))
        values = np.array([0.4, 1.0, 1.6])
        fast = estimate_constant_residual_bound(scara, SCARA_LEARNED, values,
                                                states)
        worst = 0.0
        corners = list(itertools.product(*zip(scara.control_lower,
                                              scara.control_upper)))
        for state in states:
            grad = grad_phi_smooth(SCARA_LEARNED, scara, state)
            samples = [scara.dynamics(state, p) for p in values]
            f_mean = np.mean([s.f for s in samples], axis=0)
            g_mean = np.mean([s.g for s in samples], axis=0)
            for sample in samples:
                df = float(grad @ (sample.f - f_mean))
                dg = grad @ (sample.g - g_mean)
                for corner in corners:
                    worst = max(worst, abs(df + float(dg @ np.array(corner))))
        assert fast == pytest.approx(worst, rel=1e-12, abs=1e-12)

    def test_zero_for_identical_draws(self, scara):
        states = np.array([[0.2, 0.1, 0.3, -0.4]])
        values = np.array([1.0, 1.0, 1.0])
        assert estimate_constant_residual_bound(
            scara, SCARA_LEARNED, values, states) == pytest.approx(0.0,
                                                                   abs=1e-12)

    def test_monotone_in_control_box(self, scara):
        rng = np.random.default_rng(6)
        states = rng.uniform(-0.8, 0.8, size=(5, 4))
        values = np.array([0.5, 1.0, 1.5])
        small = estimate_constant_residual_bound(
            scara, SCARA_LEARNED, values, states,
            control_box=(-5.0 * np.ones(2), 5.0 * np.ones(2)))
        large = estimate_constant_residual_bound(
            scara, SCARA_LEARNED, values, states,
            control_box=(-20.0 * np.ones(2), 20.0 * np.ones(2)))
        assert small <= large


class TestBuildBound:
    def test_kind_dispatch_and_seed_determinism(self, scara):
        state = np.array([0.1, 0.2, 0.3, 0.4])
        poly = build_bound(scara, state, kind="polytope", seed=7,
                           sample_count=12)
        poly2 = build_bound(scara, state, kind="polytope", seed=7,
                            sample_count=12)
        assert np.array_equal(poly.sigma_f.vertices, poly2.sigma_f.vertices)
        ell = build_bound(scara, state, kind="ellipsoid", seed=7,
                          sample_count=12)
        assert ell.kind == "ellipsoid"
        const = build_bound(scara, state, kind="constant", seed=7,
                            sample_count=12, d_res=2.0)
        assert const.kind == "constant" and const.d_res == 2.0

    def test_shared_parameter_values_shortcut(self, scara):
        state = np.array([0.1, 0.2, 0.3, 0.4])
        values = np.array([0.5, 1.0, 1.5])
        bound = build_bound(scara, state, kind="polytope",
                            param_values=values)
        assert bound.sigma_f.vertices.shape == (3, 4)

    def test_analytic_kind_requires_segway(self, scara, segway):
        with pytest.raises(ValueError):
            build_bound(scara, np.zeros(4), kind="ellipsoid_analytic")
        bound = build_bound(segway, np.zeros(4), kind="ellipsoid_analytic")
        assert bound.kind == "ellipsoid"

    def test_unknown_kind_raises(self, scara):
        with pytest.raises(ValueError):
            build_bound(scara, np.zeros(4), kind="zonotope")
