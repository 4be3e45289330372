"""Tests for metrics, diffeomorphisms, pullbacks and the boundary normal gauge."""

import numpy as np
import pytest

from errors import DomainEscape, PositivityViolation
from metric_core import (
    MetricField,
    boundary_normal_gauge,
    compose,
    conformal,
    diffeo_from_spec,
    euclidean,
    gauge_residuals,
    identity_diffeo,
    metric_from_spec,
    polar_components,
    pullback,
    radial_bump,
    rotation,
    sheared,
    smooth_bump,
)
from models import DiffeoSpecModel, MetricSpecModel


POINTS = (np.array([0.0, 0.3, -0.5, 0.1]), np.array([0.0, 0.4, 0.2, -0.7]))


class TestMetricField:
    """Tests for MetricField evaluation."""

    def test_euclidean_components(self, flat_metric):
        """Test the flat metric is the identity everywhere."""
        g11, g12, g22 = flat_metric.evaluate(*POINTS)
        assert np.allclose(g11, 1.0)
        assert np.allclose(g12, 0.0)
        assert np.allclose(g22, 1.0)

    def test_outside_pad_raises(self, flat_metric):
        """Test evaluation beyond the pad raises DomainEscape."""
        with pytest.raises(DomainEscape):
            flat_metric.evaluate(np.array([1.5]), np.array([0.0]))

    def test_inside_pad_allowed(self, flat_metric):
        """Test evaluation inside the pad but outside the disk."""
        g11, _, _ = flat_metric.evaluate(np.array([1.2]), np.array([0.0]))
        assert g11[0] == 1.0

    def test_not_positive_definite(self):
        """Test a metric with negative g11 raises PositivityViolation."""
        bad = MetricField(lambda x, y: (-1.0 + 0 * x, 0 * x, 1.0 + 0 * x))
        with pytest.raises(PositivityViolation):
            bad.evaluate(np.array([0.0]), np.array([0.0]))

    def test_regularity_below_two(self):
        """Test that C^1 metrics are rejected."""
        with pytest.raises(ValueError):
            MetricField(lambda x, y: (1.0, 0.0, 1.0), regularity=1)

    def test_inverse(self, sheared_metric):
        """Test that inverse components invert the metric matrix."""
        m = sheared_metric.matrix(*POINTS)
        h11, h12, h22 = sheared_metric.inverse(*POINTS)
        inv = np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)
        assert np.allclose(m @ inv, np.eye(2))

    def test_volume_density(self, conformal_metric):
        """Test sqrt(det g) of exp(2c) I is exp(2c)."""
        assert np.allclose(conformal_metric.volume_density(*POINTS), np.exp(0.2))

    def test_finite_difference_derivatives(self, radial_metric):
        """Test numerical derivatives agree with the analytic gradient."""
        numeric = MetricField(radial_metric.components)
        assert np.allclose(numeric.derivatives(*POINTS), radial_metric.derivatives(*POINTS), atol=1e-7)

    def test_christoffel_symmetric(self, sheared_metric):
        """Test Gamma^i_jk is symmetric in j, k."""
        gam = sheared_metric.christoffel(*POINTS)
        assert np.allclose(gam[:, 0, 1], gam[:, 1, 0])

    def test_flat_christoffel_vanish(self, conformal_metric):
        """Test a constant metric has no Christoffel symbols."""
        assert np.allclose(conformal_metric.christoffel(*POINTS), 0.0)

    def test_radial_curvature(self, radial_metric):
        """Test K = 4c exp(-2c(1 - r^2)) for lam = c(1 - r^2)."""
        x, y = POINTS
        expected = 0.4 * np.exp(-0.2 * (1 - x * x - y * y))
        assert np.allclose(radial_metric.gauss_curvature(x, y), expected)

    def test_numerical_curvature_matches_analytic(self, radial_metric):
        """Test curvature from Christoffel differences against the conformal formula."""
        x, y = POINTS
        numeric = radial_metric.gauss_curvature(x, y, analytic=False)
        assert np.allclose(numeric, radial_metric.gauss_curvature(x, y), rtol=1e-4)

    def test_norm(self, conformal_metric):
        """Test the g-norm of a Euclidean unit vector."""
        n = conformal_metric.norm(0.2, 0.1, (1.0, 0.0))
        assert n == pytest.approx(np.exp(0.1))

    def test_polar_components_flat(self, flat_metric):
        """Test the flat metric reads r^2 dtheta^2 + dr^2 in polar coordinates."""
        r = np.array([0.5, 1.0])
        g_tt, g_tr, g_rr = polar_components(flat_metric, np.array([0.3, 2.0]), r)
        assert np.allclose(g_tt, r ** 2)
        assert np.allclose(g_tr, 0.0)
        assert np.allclose(g_rr, 1.0)

    def test_sheared_amplitude_limit(self):
        """Test the shear amplitude must stay below 1."""
        with pytest.raises(ValueError):
            sheared(1.0)

    def test_conformal_profile(self):
        """Test unknown conformal profiles are rejected."""
        with pytest.raises(ValueError):
            conformal(0.1, 'cubic')


class TestDiffeomorphisms:
    """Tests for DiskDiffeo and its builders."""

    def test_identity(self):
        """Test the identity map."""
        psi = identity_diffeo()
        x, y = psi(*POINTS)
        assert np.allclose(x, POINTS[0])
        assert np.allclose(y, POINTS[1])
        assert np.allclose(psi.determinant(*POINTS), 1.0)

    def test_rotation_inverse(self):
        """Test the analytic inverse of a rotation."""
        psi = rotation(0.7)
        x, y = psi.inverse(*psi(*POINTS))
        assert np.allclose(x, POINTS[0])
        assert np.allclose(y, POINTS[1])
        assert psi.boundary_fixing is False

    def test_full_turn_fixes_boundary(self):
        """Test a rotation by 2 pi is boundary fixing."""
        assert rotation(2 * np.pi).boundary_fixing is True

    def test_smooth_bump_support(self):
        """Test the bump vanishes outside its support and peaks at 1."""
        b, _ = smooth_bump(np.array([0.1, 0.5, 0.9]), 0.2, 0.8)
        assert b[0] == 0.0
        assert b[1] == pytest.approx(1.0)
        assert b[2] == 0.0

    def test_radial_bump_fixes_boundary(self):
        """Test the radial bump is the identity on the unit circle and orientation preserving."""
        displacement, min_det = radial_bump(0.05).verify(nr=16, ntheta=32)
        assert displacement < 1e-12
        assert min_det > 0

    def test_radial_bump_support_inside_disk(self):
        """Test the bump support must stay inside the disk."""
        with pytest.raises(ValueError):
            radial_bump(0.05, 0.2, 1.0)

    def test_radial_bump_newton_inverse(self):
        """Test Newton inversion of the radial bump."""
        psi = radial_bump(0.05)
        x, y = psi.inverse(*psi(*POINTS))
        assert np.allclose(x, POINTS[0], atol=1e-10)
        assert np.allclose(y, POINTS[1], atol=1e-10)

    def test_radial_bump_jacobian(self):
        """Test the analytic Jacobian against central differences."""
        psi = radial_bump(0.05)
        h = 1e-6
        x, y = np.array([0.3]), np.array([0.4])
        fd_x = (np.array(psi(x + h, y)) - np.array(psi(x - h, y))) / (2 * h)
        jac = psi.jacobian(x, y)
        assert np.allclose(jac[:, 0], fd_x, atol=1e-7)

    def test_compose(self):
        """Test the composite of a rotation with its inverse rotation."""
        psi = compose(rotation(0.4), rotation(-0.4))
        x, y = psi(*POINTS)
        assert np.allclose(x, POINTS[0])
        assert np.allclose(psi.determinant(*POINTS), 1.0)

    def test_diffeo_from_spec(self):
        """Test building diffeomorphisms from their specifications."""
        assert diffeo_from_spec(DiffeoSpecModel()).name == 'identity'
        assert diffeo_from_spec(DiffeoSpecModel(kind='rotation', angle=0.5)).boundary_fixing is False
        assert diffeo_from_spec(DiffeoSpecModel(kind='radial', amp=0.02)).name == 'radial(amp=0.02)'


class TestPullback:
    """Tests for pullback metrics."""

    def test_rotation_pullback_of_flat(self, flat_metric):
        """Test rotations are isometries of the flat metric."""
        g = pullback(rotation(0.9), flat_metric)
        g11, g12, g22 = g.evaluate(*POINTS)
        assert np.allclose(g11, 1.0)
        assert np.allclose(g12, 0.0)
        assert np.allclose(g22, 1.0)
        assert g.kind == 'pullback'

    def test_pullback_agrees_on_boundary(self, conformal_metric):
        """Test a boundary-fixing pullback leaves the metric untouched outside the bump."""
        g = pullback(radial_bump(0.05, 0.2, 0.8), conformal_metric)
        x, y = np.array([0.95, 0.0]), np.array([0.0, -0.9])
        assert np.allclose(g.evaluate(x, y), conformal_metric.evaluate(x, y))

    def test_metric_from_spec(self):
        """Test building metrics from their specifications."""
        assert metric_from_spec(MetricSpecModel()).kind == 'euclidean'
        g = metric_from_spec(MetricSpecModel(kind='conformal', params={'c': 0.2, 'profile': 'radial'}))
        assert g.params == {'c': 0.2, 'profile': 'radial', 'pad': 0.3}
        pb = metric_from_spec(MetricSpecModel(kind='pullback', params={'psi': 'radial,amp=0.05'}))
        assert pb.kind == 'pullback'
        assert pb.params['base'] == 'euclidean'


class TestBoundaryNormalGauge:
    """Tests for the boundary normal gauge."""

    def test_flat_gauge_is_identity(self, flat_metric):
        """Test the gauge of the flat metric moves nothing."""
        psi = boundary_normal_gauge(flat_metric)
        x, y = psi(*POINTS)
        assert np.allclose(x, POINTS[0])
        assert np.allclose(y, POINTS[1])

    @pytest.mark.parametrize("metric", [conformal(0.1), sheared(0.1), conformal(0.1, 'radial')])
    def test_gauge_post_conditions(self, metric):
        """Test g_theta_r = 0 and g_rr = 1 on the boundary after the gauge."""
        psi = boundary_normal_gauge(metric)
        th_err, rr_err = gauge_residuals(metric, psi)
        assert th_err < 1e-8
        assert rr_err < 1e-8

    def test_gauge_fixes_boundary(self, sheared_metric):
        """Test the gauge is the identity on the unit circle."""
        psi = boundary_normal_gauge(sheared_metric)
        displacement, min_det = psi.verify(nr=16, ntheta=32)
        assert displacement < 1e-12
        assert min_det > 0
