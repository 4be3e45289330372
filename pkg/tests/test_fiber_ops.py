"""Tests for fiber frames, the fiberwise Hilbert transform and SM grid functions."""

import numpy as np
import pytest

from errors import BoundaryStencil
from fiber_ops import (
    SMGridFunction,
    fiber_evaluate,
    fiber_frame,
    fiber_hilbert,
    fiber_part,
    geodesic_derivative,
    gradients,
    hilbert_pv_oracle,
    hilbert_sign,
    perp_geodesic_derivative,
    perp_vector,
)
from grids import PolarGrid


X = np.array([0.1, -0.4, 0.5])
Y = np.array([0.2, 0.3, -0.6])


def gaussian(x, y):
    return np.exp(-x * x - 2 * y * y)


class TestFrames:
    """Tests for fiber frames and rotations."""

    def test_frame_orthonormal(self, sheared_metric):
        """Test the frame is g-orthonormal and positively oriented."""
        e1, e2 = fiber_frame(sheared_metric, X, Y)
        assert np.allclose(sheared_metric.inner(X, Y, e1, e1), 1.0)
        assert np.allclose(sheared_metric.inner(X, Y, e2, e2), 1.0)
        assert np.allclose(sheared_metric.inner(X, Y, e1, e2), 0.0)
        assert np.all(e1[0] * e2[1] - e1[1] * e2[0] > 0)

    def test_flat_perp(self, flat_metric):
        """Test v_perp is the clockwise rotation (a, b) -> (b, -a)."""
        px, py = perp_vector(flat_metric, 0.0, 0.0, 0.6, 0.8)
        assert px == pytest.approx(0.8)
        assert py == pytest.approx(-0.6)

    def test_perp_is_unit_and_orthogonal(self, sheared_metric):
        """Test v_perp is g-unit and g-orthogonal to v."""
        e1, _ = fiber_frame(sheared_metric, X, Y)
        px, py = perp_vector(sheared_metric, X, Y, *e1)
        assert np.allclose(sheared_metric.inner(X, Y, (px, py), (px, py)), 1.0)
        assert np.allclose(sheared_metric.inner(X, Y, (px, py), e1), 0.0)


class TestHilbert:
    """Tests for the fiberwise Hilbert transform."""

    def test_sign(self):
        """Test the multiplier sign calibrated against the kernel."""
        assert hilbert_sign() == 1.0

    def test_pv_oracle(self):
        """Test the principal value of cos is sin."""
        theta = np.linspace(0, 2 * np.pi, 7)
        assert np.allclose(hilbert_pv_oracle(np.cos, theta), np.sin(theta), atol=1e-10)

    def test_cos_to_sin(self):
        """Test H cos(k phi) = sin(k phi) and H annihilates constants."""
        phi = 2 * np.pi * np.arange(16) / 16
        assert np.allclose(fiber_hilbert(np.cos(3 * phi)), np.sin(3 * phi))
        assert np.allclose(fiber_hilbert(np.ones(16)), 0.0)

    def test_parity_hilbert(self):
        """Test H+ and H- act on the even and odd parts only."""
        phi = 2 * np.pi * np.arange(16) / 16
        u = np.cos(phi) + np.cos(2 * phi)
        assert np.allclose(fiber_hilbert(u, 'odd'), np.sin(phi))
        assert np.allclose(fiber_hilbert(u, 'even'), np.sin(2 * phi))

    def test_parts(self):
        """Test the even and odd parts in the fiber."""
        phi = 2 * np.pi * np.arange(8) / 8
        u = 1.0 + np.cos(phi)
        assert np.allclose(fiber_part(u, 'even'), 1.0)
        assert np.allclose(fiber_part(u, 'odd'), np.cos(phi))

    def test_part_errors(self):
        """Test odd node counts and unknown parities are rejected."""
        with pytest.raises(ValueError):
            fiber_part(np.zeros(7), 'even')
        with pytest.raises(ValueError):
            fiber_part(np.zeros(8), 'neither')

    def test_fiber_evaluate(self):
        """Test evaluating rfft coefficients between the nodes."""
        phi = 2 * np.pi * np.arange(16) / 16
        coeffs = np.fft.rfft(np.cos(3 * phi) + 0.5)
        assert fiber_evaluate(coeffs, 0.37, 16) == pytest.approx(np.cos(1.11) + 0.5)


class TestSMGridFunction:
    """Tests for SMGridFunction."""

    def test_lift_integral(self, flat_metric):
        """Test the fiber integral of a lifted function is 2 pi f."""
        grid = PolarGrid(4, 8)
        u = SMGridFunction.lift(flat_metric, grid, 8, lambda x, y: x)
        x, _ = grid.cartesian()
        assert np.allclose(u.fiber_integral().values, 2 * np.pi * x)

    def test_shape_mismatch(self, flat_metric):
        """Test values must lead with the grid shape."""
        with pytest.raises(ValueError):
            SMGridFunction(flat_metric, PolarGrid(4, 8), np.zeros((4, 8, 8)))

    def test_evaluate_velocity(self, flat_metric):
        """Test evaluating u(x, v) = vx off the grid."""
        u = SMGridFunction.from_callable(flat_metric, PolarGrid(8, 16), 16,
                                         lambda x, y, vx, vy: vx + 0 * x)
        assert u(0.3, 0.2, 0.6, 0.8) == pytest.approx(0.6, abs=1e-8)

    def test_flat_gradients(self, flat_metric):
        """Test df(v) = cos(phi) and df(v_perp) = sin(phi) for f = x."""
        grid = PolarGrid(4, 8)
        along, across = gradients(flat_metric, lambda x, y: x, grid, 8)
        phi = 2 * np.pi * np.arange(8) / 8
        assert np.allclose(along.values, np.cos(phi), atol=1e-8)
        assert np.allclose(across.values, np.sin(phi), atol=1e-8)

    def test_hilbert_of_gradient(self, sheared_metric):
        """Test H df(v) = df(v_perp) pointwise for a non-conformal metric."""
        along, across = gradients(sheared_metric, gaussian, PolarGrid(4, 8), 16)
        assert np.allclose(along.hilbert().values, across.values, atol=1e-6)

    def test_parity_and_arithmetic(self, flat_metric):
        """Test even and odd parts sum back to the function."""
        u = SMGridFunction.from_callable(flat_metric, PolarGrid(4, 8), 8,
                                         lambda x, y, vx, vy: x + vx * vx + vy)
        assert np.allclose((u.even() + u.odd()).values, u.values)
        assert np.allclose((2 * u - u).values, u.values)


class TestGeodesicDerivatives:
    """Tests for flow-difference derivatives."""

    def test_geodesic_derivative(self, flat_flow):
        """Test X(x^2) = 2 x vx along flat geodesics."""
        d = geodesic_derivative(flat_flow, lambda x, y, vx, vy: x * x, 0.3, 0.1, 0.6, 0.8)
        assert d == pytest.approx(2 * 0.3 * 0.6, abs=1e-8)

    def test_perp_geodesic_derivative(self, flat_flow):
        """Test X_perp x is the first component of v_perp."""
        d = perp_geodesic_derivative(flat_flow, lambda x, y, vx, vy: x, 0.2, 0.1, 0.6, 0.8)
        assert d == pytest.approx(0.8, abs=1e-8)

    def test_boundary_stencil(self, flat_flow):
        """Test stencils leaving the disk raise BoundaryStencil."""
        with pytest.raises(BoundaryStencil):
            geodesic_derivative(flat_flow, lambda x, y, vx, vy: x, 1.0, 0.0, 1.0, 0.0)

    def test_grid_derivative_of_constant(self, flat_metric, flat_flow):
        """Test X and X_perp vanish on a lifted constant."""
        u = SMGridFunction.lift(flat_metric, PolarGrid(4, 16), 8, lambda x, y: 1.0 + 0 * x)
        assert np.allclose(u.geodesic_derivative(flat_flow).values, 0.0, atol=1e-8)
        assert np.allclose(u.perp_geodesic_derivative(flat_flow).values, 0.0, atol=1e-8)

    def test_grid_derivative_of_linear(self, flat_metric, flat_flow):
        """Test X x = vx at interior nodes of the grid."""
        grid = PolarGrid(8, 64)
        u = SMGridFunction.lift(flat_metric, grid, 8, lambda x, y: x)
        du = u.geodesic_derivative(flat_flow)
        phi = 2 * np.pi * np.arange(8) / 8
        assert np.allclose(du.values[:-1], np.broadcast_to(np.cos(phi), du.values[:-1].shape), atol=1e-2)

    def test_grid_derivative_flags_boundary(self, flat_metric, flat_flow):
        """Test every direction on the boundary circle falls back to a one-sided stencil."""
        u = SMGridFunction.lift(flat_metric, PolarGrid(8, 64), 8, lambda x, y: x)
        du = u.geodesic_derivative(flat_flow)
        assert du.one_sided == 64 * 8
