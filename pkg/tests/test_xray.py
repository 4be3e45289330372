"""Tests for the X-ray transform, backprojection and continuation operators."""

import numpy as np
import pytest

from boundary_geom import BoundaryGeometry, FanGrid, scatter
from fiber_ops import fiber_directions
from geodesic_flow import GeodesicFlow
from grids import DiskGridFunction, PolarGrid
from xray import (
    FiberTraces,
    adjointness_gap,
    backproject_at,
    backprojection,
    boundary_trace_pair,
    continuation,
    continuation_adjoint,
    normal_operator,
    normal_operator_fan,
    sharp,
    trace_adjoint,
    xray_at,
    xray_of_table,
    xray_transform,
)


def one(x, y):
    return np.ones(np.broadcast(x, y).shape)


def off_centre(x, y):
    return np.exp(-3 * ((x - 0.2) ** 2 + (y + 0.1) ** 2))


def boundary_bump(beta, alpha):
    return np.exp(-2 * (1 - np.cos(beta - 1.0))) * np.cos(alpha) ** 2 + 0.3 * np.sin(beta) * np.cos(alpha) ** 3


@pytest.fixture
def fan(flat_metric):
    """Coarse flat fan."""
    return FanGrid(BoundaryGeometry(flat_metric), 16, 8, guard=0.05)


class TestXray:
    """Tests for the X-ray transform."""

    def test_flat_xray_of_one(self, flat_flow, fan):
        """Test I 1 is the chord length 2 cos(alpha)."""
        result = xray_transform(flat_flow, one, fan)
        _, aa = fan.mesh()
        assert np.allclose(result.values, 2 * np.cos(aa), atol=1e-9)

    def test_xray_at(self, flat_flow):
        """Test I x along the chord through the centre is zero."""
        assert xray_at(flat_flow, lambda x, y: x, 0.0, 0.0) == pytest.approx(0.0, abs=1e-10)
        assert xray_at(flat_flow, one, 1.0, 0.4) == pytest.approx(2 * np.cos(0.4), abs=1e-9)

    def test_xray_of_table(self, flat_flow, fan):
        """Test X-rays from recorded paths match on-the-fly integration."""
        table = scatter(flat_flow, fan, record=True)
        f = lambda x, y: x * x + y
        assert np.allclose(xray_of_table(table, f).values, xray_transform(flat_flow, f, fan).values,
                           atol=1e-8)


class TestBackprojection:
    """Tests for fiber traces and backprojection."""

    def test_traces_validation(self, flat_metric):
        """Test odd nphi and mismatched radii are rejected."""
        flow = GeodesicFlow(flat_metric, h_ode=0.01, radius=1.2)
        with pytest.raises(ValueError):
            FiberTraces(flow, PolarGrid(4, 8), 8)
        with pytest.raises(ValueError):
            FiberTraces(GeodesicFlow(flat_metric, h_ode=0.01), PolarGrid(4, 8), 7)

    def test_chord_time_at_centre(self, flat_flow):
        """Test every chord through the centre has length 2."""
        traces = FiberTraces(flat_flow, PolarGrid(4, 8), 8)
        assert np.allclose(traces.chord_time()[0], 2.0, atol=1e-9)

    def test_backprojection_of_constant(self, flat_flow, fan):
        """Test I* 1 = 2 pi."""
        traces = FiberTraces(flat_flow, PolarGrid(4, 8), 8)
        result = backprojection(fan.zeros() + 1.0, traces)
        assert np.allclose(result.values, 2 * np.pi)

    def test_backproject_at(self, flat_flow, fan):
        """Test single-point backprojection of a constant."""
        assert backproject_at(flat_flow, fan.zeros() + 1.0, 0.1, 0.2, nphi=16) == pytest.approx(2 * np.pi)

    def test_normal_operator_at_centre(self, flat_flow):
        """Test N 1(0) = 4 pi."""
        result = normal_operator(flat_flow, one, PolarGrid(4, 8), 16)
        assert result.values[0, 0] == pytest.approx(4 * np.pi, abs=1e-8)

    def test_normal_operator_fan(self, flat_flow, small_grid):
        """Test I*(I 1) at the centre against 4 pi."""
        fan = FanGrid(BoundaryGeometry(flat_flow.metric), small_grid.nbeta, small_grid.nalpha)
        table = scatter(flat_flow, fan, record=True)
        traces = FiberTraces(flat_flow, PolarGrid(4, 8), 16)
        result = normal_operator_fan(table, traces, one)
        assert result.values[0, 0] == pytest.approx(4 * np.pi, rel=1e-3)

    def test_adjointness(self, flat_flow, small_grid):
        """Test <I f, w>_mu = <f, I* w>_vol for a Gaussian and a constant weight."""
        grid = PolarGrid(small_grid.nr, small_grid.ntheta)
        f = DiskGridFunction.from_callable(grid, lambda x, y: np.exp(-2 * (x * x + y * y)))
        fan = FanGrid(BoundaryGeometry(flat_flow.metric), small_grid.nbeta, small_grid.nalpha)
        lhs, rhs, gap = adjointness_gap(flat_flow, f, fan.zeros() + 1.0, nphi=small_grid.nphi)
        assert lhs > 0
        assert gap < 2e-2

    def test_adjointness_boundary_bump(self, flat_flow, small_grid):
        """Test adjointness for an off-centre Gaussian against a bump in beta tapered in alpha."""
        grid = PolarGrid(small_grid.nr, small_grid.ntheta)
        f = DiskGridFunction.from_callable(grid, off_centre)
        fan = FanGrid(BoundaryGeometry(flat_flow.metric), small_grid.nbeta, small_grid.nalpha)
        lhs, rhs, gap = adjointness_gap(flat_flow, f, fan.from_callable(boundary_bump), nphi=small_grid.nphi)
        assert lhs > 0
        assert gap < 2e-2

    @pytest.mark.slow
    def test_adjointness_gap_shrinks(self, flat_flow):
        """Test the adjointness gap for the boundary bump decreases on a doubled grid."""
        gaps = []
        for level in (1, 2):
            grid = PolarGrid(8 * level, 16 * level)
            f = DiskGridFunction.from_callable(grid, off_centre)
            fan = FanGrid(BoundaryGeometry(flat_flow.metric), 16 * level, 8 * level)
            gaps.append(adjointness_gap(flat_flow, f, fan.from_callable(boundary_bump), nphi=16 * level)[2])
        assert gaps[1] < gaps[0]

    def test_normal_operator_is_self_adjoint(self, flat_flow):
        """Test <N f1, f2> = <f1, N f2> for two displaced Gaussians."""
        grid = PolarGrid(16, 32)
        f1 = lambda x, y: np.exp(-3 * ((x - 0.3) ** 2 + y ** 2))
        f2 = lambda x, y: np.exp(-3 * ((x + 0.2) ** 2 + (y - 0.3) ** 2))
        n1 = normal_operator(flat_flow, f1, grid, 32)
        n2 = normal_operator(flat_flow, f2, grid, 32)
        left = n1.inner(DiskGridFunction.from_callable(grid, f2), flat_flow.metric)
        right = DiskGridFunction.from_callable(grid, f1).inner(n2, flat_flow.metric)
        assert left > 0
        assert abs(left - right) / left < 2e-2

    @pytest.mark.parametrize('f', [
        lambda x, y: x * np.exp(-2 * (x * x + y * y)),
        lambda x, y: np.exp(-3 * ((x - 0.3) ** 2 + y ** 2)) - np.exp(-3 * ((x + 0.3) ** 2 + y ** 2)),
        lambda x, y: np.cos(3 * x) * np.sin(2 * y),
    ])
    def test_normal_operator_is_positive(self, flat_flow, f):
        """Test <N f, f> > 0 for sign-changing functions."""
        grid = PolarGrid(16, 32)
        value = normal_operator(flat_flow, f, grid, 32).inner(DiskGridFunction.from_callable(grid, f),
                                                              flat_flow.metric)
        assert value > 0

    def test_normal_operator_commutes_with_rotation(self, radial_metric):
        """Test N(f o R)(x) = (N f)(R x) for a quarter turn under a rotation-invariant metric."""
        flow = GeodesicFlow(radial_metric, h_ode=0.01)
        grid = PolarGrid(4, 16)
        shift = grid.ntheta // 4
        f = lambda x, y: np.exp(-2 * ((x - 0.3) ** 2 + (y - 0.1) ** 2))
        rotated = lambda x, y: f(-y, x)
        plain = normal_operator(flow, f, grid, 16).values
        turned = normal_operator(flow, rotated, grid, 16).values
        assert np.allclose(turned, np.roll(plain, -shift, axis=1), rtol=1e-6, atol=1e-9)

    def test_sharp_is_constant_along_the_flow(self, radial_metric):
        """Test w^# at a node equals w at the incoming end of the geodesic after flowing for 0.1."""
        flow = GeodesicFlow(radial_metric, h_ode=0.01)
        grid = PolarGrid(4, 8)
        traces = FiberTraces(flow, grid, 8)
        fan = FanGrid(BoundaryGeometry(radial_metric), 16, 8)
        w = fan.from_callable(boundary_bump)
        inner = grid.r <= 0.5
        lifted = sharp(w, traces).values[inner].ravel()

        x, y = grid.cartesian()
        vx, vy = fiber_directions(radial_metric, x, y, 8)
        px = np.broadcast_to(x[..., None], vx.shape)[inner].ravel()
        py = np.broadcast_to(y[..., None], vy.shape)[inner].ravel()
        fx, fy, fvx, fvy = flow.flow_for(px, py, vx[inner].ravel(), vy[inner].ravel(), 0.1)
        back = flow.shoot(fx, fy, -fvx, -fvy)
        beta, alpha = traces.geometry.fan_coordinates(back.exit_x, back.exit_y, -back.exit_vx, -back.exit_vy)
        expected, clipped = w.interpolate(beta, alpha)
        assert not clipped.any()
        assert np.allclose(lifted, expected, atol=1e-6)


class TestContinuation:
    """Tests for the continuation operators."""

    def test_even_and_odd_continuation(self, flat_flow, fan):
        """Test the outgoing sheet carries +w or -w."""
        table = scatter(flat_flow, fan)
        w = fan.zeros() + 3.0
        assert np.allclose(continuation(w, table, '+').outgoing.values, 3.0)
        assert np.allclose(continuation(w, table, 'odd').outgoing.values, -3.0)

    def test_adjoint_of_continuation(self, flat_flow, fan):
        """Test A*+ A+ doubles a constant and A*- A- cancels it."""
        table = scatter(flat_flow, fan)
        w = fan.zeros() + 1.0
        assert np.allclose(continuation_adjoint(continuation(w, table, '+'), table, '+').values, 2.0)
        assert np.allclose(continuation_adjoint(continuation(w, table, '+'), table, '-').values, 0.0)

    def test_invalid_parity(self, flat_flow, fan):
        """Test unknown parities are rejected."""
        table = scatter(flat_flow, fan)
        with pytest.raises(ValueError):
            continuation(fan.zeros(), table, 'sideways')

    def test_trace_adjoint(self, flat_flow, fan):
        """Test the adjoint on lifted boundary functions."""
        table = scatter(flat_flow, fan)
        pair = boundary_trace_pair(fan, np.cos)
        bb, _ = fan.mesh()
        assert np.allclose(pair.incoming.values, np.cos(bb))
        assert np.allclose(trace_adjoint(lambda b: 1.0 + 0 * b, table, '-').values, 0.0)
        assert np.allclose(trace_adjoint(lambda b: 1.0 + 0 * b, table, '+').values, 2.0)
        assert pair.inner(pair) == pytest.approx(2 * pair.incoming.inner(pair.incoming))
