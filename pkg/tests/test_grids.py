"""Tests for polar grids and sampled disk functions."""

import numpy as np
import pytest

from grids import DiskGridFunction, PolarGrid
from metric_core import conformal


class TestPolarGrid:
    """Tests for PolarGrid."""

    def test_nodes(self):
        """Test radial and angular nodes."""
        grid = PolarGrid(4, 8)
        assert np.allclose(grid.r, [0.0, 0.25, 0.5, 0.75, 1.0])
        assert grid.theta[2] == pytest.approx(np.pi / 2)
        assert grid.shape == (5, 8)

    def test_radius(self):
        """Test a grid on a larger disk."""
        grid = PolarGrid(4, 8, radius=2.0)
        assert grid.r[-1] == 2.0
        assert grid.dr == 0.5

    def test_odd_ntheta(self):
        """Test the angular node count must be even."""
        with pytest.raises(ValueError):
            PolarGrid(4, 7)

    def test_too_few_rings(self):
        """Test at least two radial intervals are required."""
        with pytest.raises(ValueError):
            PolarGrid(1, 8)

    def test_area(self):
        """Test the quadrature weights integrate the disk area exactly."""
        grid = PolarGrid(16, 32)
        assert grid.quadrature_weights().sum() == pytest.approx(np.pi)

    def test_riemannian_volume(self):
        """Test the weights carry sqrt(det g)."""
        grid = PolarGrid(16, 32)
        assert grid.quadrature_weights(conformal(0.1)).sum() == pytest.approx(np.pi * np.exp(0.2))

    def test_refined(self):
        """Test refinement doubles both resolutions."""
        assert PolarGrid(8, 16, 1.2).refined() == PolarGrid(16, 32, 1.2)


class TestDiskGridFunction:
    """Tests for DiskGridFunction."""

    def test_shape_mismatch(self):
        """Test values must match the grid shape."""
        with pytest.raises(ValueError):
            DiskGridFunction(PolarGrid(4, 8), np.zeros((4, 8)))

    def test_pole_is_averaged(self):
        """Test the pole carries a single value."""
        grid = PolarGrid(4, 8)
        values = np.zeros(grid.shape)
        values[0] = np.arange(8)
        f = DiskGridFunction(grid, values)
        assert np.allclose(f.values[0], 3.5)

    def test_interpolates_linear_function(self):
        """Test the spline reproduces x = r cos(theta) off the nodes."""
        grid = PolarGrid(16, 32)
        f = DiskGridFunction.from_callable(grid, lambda x, y: x)
        x = np.array([0.0, 0.123, -0.4, 0.7])
        y = np.array([0.0, 0.3, -0.55, 0.1])
        assert np.allclose(f(x, y), x, atol=1e-4)

    def test_gradient(self):
        """Test the Cartesian gradient of r^2."""
        grid = PolarGrid(16, 32)
        f = DiskGridFunction.from_callable(grid, lambda x, y: x * x + y * y)
        x = np.array([0.31, -0.42, 0.02])
        y = np.array([0.2, 0.5, -0.01])
        fx, fy = f.gradient(x, y)
        assert np.allclose(fx, 2 * x, atol=1e-4)
        assert np.allclose(fy, 2 * y, atol=1e-4)

    def test_outside_is_clamped(self):
        """Test points beyond the grid radius read the outer ring."""
        grid = PolarGrid(8, 16)
        f = DiskGridFunction.from_callable(grid, lambda x, y: x * x + y * y)
        assert f(np.array([1.5]), np.array([0.0]))[0] == pytest.approx(1.0)

    def test_integrate_and_norm(self):
        """Test integrals of constants with and without r_max."""
        grid = PolarGrid(16, 32)
        one = DiskGridFunction(grid, np.ones(grid.shape))
        assert one.integrate() == pytest.approx(np.pi)
        assert one.integrate(r_max=0.5) == pytest.approx(2 * np.pi * 36 / 256)
        assert (2 * one).l2_norm() == pytest.approx(2 * np.sqrt(np.pi))

    def test_arithmetic(self):
        """Test grid function arithmetic."""
        grid = PolarGrid(4, 8)
        a = DiskGridFunction(grid, np.full(grid.shape, 2.0))
        b = DiskGridFunction(grid, np.full(grid.shape, 3.0))
        assert np.allclose((a + b).values, 5.0)
        assert np.allclose((a - b).values, -1.0)
        assert np.allclose((a * b).values, 6.0)
        assert np.allclose((b / a).values, 1.5)
        assert np.allclose((-a).values, -2.0)
        assert np.allclose((a - 1.0).values, 1.0)

    def test_grid_mismatch(self):
        """Test functions on different grids cannot be combined."""
        a = DiskGridFunction.zeros(PolarGrid(4, 8))
        b = DiskGridFunction.zeros(PolarGrid(8, 8))
        with pytest.raises(ValueError):
            a + b

    def test_rows(self):
        """Test CSV rows cover every node."""
        grid = PolarGrid(4, 8)
        rows = list(DiskGridFunction.zeros(grid).rows())
        assert len(rows) == 5 * 8
        assert rows[-1][0] == 1.0

    def test_boundary_values(self):
        """Test the outer ring values."""
        grid = PolarGrid(4, 8)
        f = DiskGridFunction.from_callable(grid, lambda x, y: x)
        assert np.allclose(f.boundary_values(), np.cos(grid.theta))
