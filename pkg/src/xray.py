"""Geodesic X-ray transform, backprojection, normal operator and continuations."""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from boundary_geom import BoundaryGeometry, FanGrid, ScatteringTable
from errors import GlancingClip
from fiber_ops import SMGridFunction, fiber_directions
from geodesic_flow import GeodesicFlow
from grids import DiskGridFunction, PolarGrid

logger = logging.getLogger(__name__)


def _scalar_integrand(f: Callable):
    return lambda x, y, vx, vy: f(x, y)


def xray_transform(flow: GeodesicFlow, f: Callable, fan: FanGrid) -> FanGrid:
    """I f on every fan node, integrating f along the geodesics on the fly."""
    x, y, vx, vy = fan.phase_points()
    res = flow.shoot(x, y, vx, vy, integrands=(_scalar_integrand(f),))
    return fan.with_values(res.integrals[0].reshape(fan.shape))


def xray_at(flow: GeodesicFlow, f: Callable, beta: float, alpha: float) -> float:
    """I f at a single fan coordinate."""
    geom = BoundaryGeometry(flow.metric, flow.radius)
    x, y, vx, vy = geom.phase_point(beta, alpha)
    res = flow.shoot(x, y, vx, vy, integrands=(_scalar_integrand(f),))
    return float(res.integrals[0][0])


def xray_of_table(table: ScatteringTable, f: Callable) -> FanGrid:
    """I f from the paths recorded in a scattering table."""
    return table.fan.with_values(table.integrate(_scalar_integrand(f)))


class FiberTraces:
    """Backward exits of the geodesics through every grid node and fiber direction.

    One forward shot per (node, v_k) is enough: with nphi even the backward
    exit of (x, v_k) is the forward exit of (x, v_{k + nphi/2}).
    """

    def __init__(self, flow: GeodesicFlow, grid: PolarGrid, nphi: int):
        """Shoot the fiber geodesics of every node.

        Args:
            flow: Geodesic flow on the disk of radius grid.radius
            grid: Polar grid of base points
            nphi: Even number of fiber directions
        """
        if nphi % 2:
            raise ValueError(f"nphi must be even, got {nphi}")
        if not np.isclose(flow.radius, grid.radius):
            raise ValueError(f"Flow radius {flow.radius} does not match grid radius {grid.radius}")
        self.flow = flow
        self.grid = grid
        self.nphi = nphi
        self.geometry = BoundaryGeometry(flow.metric, flow.radius)

        x, y = grid.cartesian()
        vx, vy = fiber_directions(flow.metric, x, y, nphi)
        # the pole is a single point: shoot its fiber once
        xs = np.concatenate([np.zeros(1), x[1:].ravel()])
        ys = np.concatenate([np.zeros(1), y[1:].ravel()])
        vxs = np.concatenate([vx[0, :1].reshape(1, nphi), vx[1:].reshape(-1, nphi)])
        vys = np.concatenate([vy[0, :1].reshape(1, nphi), vy[1:].reshape(-1, nphi)])
        npts = xs.size
        res = flow.shoot(np.repeat(xs, nphi), np.repeat(ys, nphi), vxs.ravel(), vys.ravel())
        beta, alpha = self.geometry.fan_coordinates(res.exit_x, res.exit_y, -res.exit_vx, -res.exit_vy)
        half = nphi // 2

        def expand(a):
            a = a.reshape(npts, nphi)
            full = np.empty(grid.shape + (nphi,))
            full[0] = a[0]
            full[1:] = a[1:].reshape(grid.nr, grid.ntheta, nphi)
            return full

        self.tau_forward = expand(res.tau)
        # incoming fan coordinate of the geodesic through (x, v_k)
        self.beta_in = np.roll(expand(beta), -half, axis=-1)
        self.alpha_in = np.roll(expand(alpha), -half, axis=-1)
        self.tau_backward = np.roll(self.tau_forward, -half, axis=-1)
        logger.debug(f"Fiber traces: {npts} nodes x {nphi} directions, max chord "
                     f"{np.max(self.tau_forward + self.tau_backward):.4f}")

    def chord_time(self) -> np.ndarray:
        """tau(x, v) + tau(x, -v) at every node and direction."""
        return self.tau_forward + self.tau_backward


def sharp(w: FanGrid, traces: FiberTraces) -> SMGridFunction:
    """w^#: the value of w at the incoming end of the geodesic through (x, v).

    Lookups outside the guard band are extrapolated flat and counted in the
    ``clipped`` attribute of the result.
    """
    vals, clipped = w.interpolate(traces.beta_in, traces.alpha_in)
    n_clip = int(clipped.sum())
    if n_clip:
        logger.warning(f"{GlancingClip.__name__}: {n_clip} sharp lookups outside the guard band")
    return SMGridFunction(traces.flow.metric, traces.grid, vals, clipped=n_clip)


def backprojection(w: FanGrid, traces: FiberTraces) -> DiskGridFunction:
    """I* w(x) = integral of w^# over the fiber circle (trapezoid rule)."""
    return sharp(w, traces).fiber_integral()


def backproject_at(flow: GeodesicFlow, w: FanGrid, x: float, y: float, nphi: int = 256) -> float:
    """I* w at a single point."""
    geom = BoundaryGeometry(flow.metric, flow.radius)
    vx, vy = fiber_directions(flow.metric, np.array(x), np.array(y), nphi)
    res = flow.shoot(np.full(nphi, x), np.full(nphi, y), -vx.ravel(), -vy.ravel())
    beta, alpha = geom.fan_coordinates(res.exit_x, res.exit_y, -res.exit_vx, -res.exit_vy)
    vals, clipped = w.interpolate(beta, alpha)
    if clipped.any():
        logger.warning(f"{GlancingClip.__name__}: {int(clipped.sum())} lookups outside the guard band")
    return float(vals.sum() * 2 * np.pi / nphi)


def normal_operator(flow: GeodesicFlow, f: Callable, grid: PolarGrid, nphi: int) -> DiskGridFunction:
    """N f(x) = 2 sum_k dphi int_0^tau(x, v_k) f along the geodesic (per-node quadrature)."""
    x, y = grid.cartesian()
    xs = np.concatenate([np.zeros(1), x[1:].ravel()])
    ys = np.concatenate([np.zeros(1), y[1:].ravel()])
    vx, vy = fiber_directions(flow.metric, xs, ys, nphi)
    res = flow.shoot(np.repeat(xs, nphi), np.repeat(ys, nphi), vx.ravel(), vy.ravel(),
                     integrands=(_scalar_integrand(f),))
    per_node = 2 * res.integrals[0].reshape(xs.size, nphi).sum(axis=1) * (2 * np.pi / nphi)
    values = np.empty(grid.shape)
    values[0] = per_node[0]
    values[1:] = per_node[1:].reshape(grid.nr, grid.ntheta)
    return DiskGridFunction(grid, values)


def normal_operator_fan(table: ScatteringTable, traces: FiberTraces, f: Callable) -> DiskGridFunction:
    """N f as I*(I f) using recorded fan paths and fiber traces."""
    return backprojection(xray_of_table(table, f), traces)


@dataclass
class BoundaryPairFunction:
    """A function on the boundary of SM stored as two fan sheets.

    ``incoming`` holds u(x(beta), v(beta, alpha)); ``outgoing`` holds
    u(x(beta), -v(beta, alpha)).
    """

    incoming: FanGrid
    outgoing: FanGrid

    def inner(self, other: 'BoundaryPairFunction') -> float:
        """L2 inner product with weight |mu| on both sheets."""
        return self.incoming.inner(other.incoming) + self.outgoing.inner(other.outgoing)


def continuation(w: FanGrid, table: ScatteringTable, parity: str) -> BoundaryPairFunction:
    """A+ w or A- w: w on the incoming sheet, +-w composed with the scattering relation on the outgoing one."""
    sign = _parity_sign(parity)
    vals, clipped = w.interpolate(table.beta_out, table.alpha_rev)
    if clipped.any():
        logger.warning(f"{GlancingClip.__name__}: {int(clipped.sum())} continuation lookups clipped")
    return BoundaryPairFunction(w, w.with_values(sign * vals))


def continuation_adjoint(u: BoundaryPairFunction, table: ScatteringTable, parity: str) -> FanGrid:
    """A*+ u or A*- u = (u_in +- u_out composed with the scattering relation) on the incoming sheet."""
    sign = _parity_sign(parity)
    vals, clipped = u.outgoing.interpolate(table.beta_out, table.alpha_rev)
    if clipped.any():
        logger.warning(f"{GlancingClip.__name__}: {int(clipped.sum())} adjoint lookups clipped")
    return u.incoming.with_values(u.incoming.values + sign * vals)


def boundary_trace_pair(fan: FanGrid, f0: Callable) -> BoundaryPairFunction:
    """Lift a boundary function f0(beta) to both sheets (constant along fibers)."""
    bb, _ = fan.mesh()
    vals = np.asarray(f0(bb), dtype=float) * np.ones(fan.shape)
    return BoundaryPairFunction(fan.with_values(vals), fan.with_values(vals))


def trace_adjoint(f0: Callable, table: ScatteringTable, parity: str) -> FanGrid:
    """A*+ or A*- of a boundary function lifted to both sheets, read off at the exact exit angles."""
    sign = _parity_sign(parity)
    bb, _ = table.fan.mesh()
    vals = np.asarray(f0(bb), dtype=float) + sign * np.asarray(f0(table.beta_out), dtype=float)
    return table.fan.with_values(vals)


def _parity_sign(parity: str) -> float:
    if parity in ('+', 'even'):
        return 1.0
    if parity in ('-', 'odd'):
        return -1.0
    raise ValueError(f"Unknown parity '{parity}'")


def inner_mu(a: FanGrid, b: FanGrid) -> float:
    return a.inner(b)


def inner_volume(f1: DiskGridFunction, f2: DiskGridFunction, metric) -> float:
    return f1.inner(f2, metric)


def adjointness_gap(flow: GeodesicFlow, f: DiskGridFunction, w: FanGrid,
                    traces: Optional[FiberTraces] = None, nphi: int = 256) -> Tuple[float, float, float]:
    """Both sides of <I f, w>_mu = <f, I* w>_vol and their relative gap."""
    traces = traces or FiberTraces(flow, f.grid, nphi)
    lhs = xray_transform(flow, f, w).inner(w)
    rhs = f.inner(backprojection(w, traces), flow.metric)
    gap = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
    return lhs, rhs, gap
