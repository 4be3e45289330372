"""Geodesic flow on the disk: batched RK4 shooting, exit times, Jacobi fields, simplicity."""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from errors import StepUnderflow, TrappedGeodesic
from grids import DiskGridFunction, PolarGrid
from metric_core import MetricField
from models import SimplicityReport

logger = logging.getLogger(__name__)

TAU_MAX = 100.0
RHO_TOL = 1e-12
CONJUGATE_TOL = 1e-10
MAX_REFINE_ITER = 100

Integrand = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class PhasePoint:
    """A point (x, v) of the unit sphere bundle."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(2)
        self.v = np.asarray(self.v, dtype=float).reshape(2)

    @classmethod
    def unit(cls, metric: MetricField, x, v) -> 'PhasePoint':
        """Build a phase point, rescaling v to g-unit length."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        n = float(metric.norm(x[0], x[1], (v[0], v[1])))
        return cls(x, v / n)

    def speed(self, metric: MetricField) -> float:
        return float(metric.norm(self.x[0], self.x[1], (self.v[0], self.v[1])))

    def reversed(self) -> 'PhasePoint':
        return PhasePoint(self.x.copy(), -self.v)


@dataclass
class GeodesicTrace:
    """A fully integrated geodesic with its exit data."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    exit_time: float
    exit_phase: PhasePoint
    jacobi: Optional[np.ndarray] = None

    @property
    def has_conjugate_point(self) -> bool:
        if self.jacobi is None or len(self.jacobi) < 2:
            return False
        return bool(np.min(self.jacobi[1:]) <= CONJUGATE_TOL)


@dataclass
class PathQuadrature:
    """Simpson panels recorded along a batch of geodesics.

    Each panel contributes its two end nodes and a Hermite midpoint; the
    owner array maps every node to its geodesic.
    """

    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    weight: np.ndarray
    owner: np.ndarray
    count: int

    def integrate(self, integrand: Integrand) -> np.ndarray:
        """Integrate integrand(x, y, vx, vy) along every recorded geodesic."""
        values = np.asarray(integrand(self.x, self.y, self.vx, self.vy), dtype=float)
        values = np.broadcast_to(values, self.weight.shape)
        return np.bincount(self.owner, weights=self.weight * values, minlength=self.count)


@dataclass
class ShotResult:
    """Exit data of a batch of geodesics."""

    exit_x: np.ndarray
    exit_y: np.ndarray
    exit_vx: np.ndarray
    exit_vy: np.ndarray
    tau: np.ndarray
    trapped: np.ndarray
    integrals: Optional[np.ndarray] = None
    jacobi_min: Optional[np.ndarray] = None
    paths: Optional[PathQuadrature] = None
    state: Optional[np.ndarray] = None
    trace: List[np.ndarray] = field(default_factory=list)

    @property
    def conjugate(self) -> np.ndarray:
        if self.jacobi_min is None:
            raise ValueError("Jacobi fields were not integrated")
        return self.jacobi_min <= CONJUGATE_TOL


class GeodesicFlow:
    """Unit-speed geodesic flow of a metric on the disk of a given radius."""

    def __init__(self, metric: MetricField, h_ode: float = 1e-3, tau_max: float = TAU_MAX,
                 radius: float = 1.0, path_step: float = 0.01):
        """Initialize the flow.

        Args:
            metric: Metric whose geodesics are integrated
            h_ode: RK4 step size
            tau_max: Trapping timeout
            radius: Radius of the disk whose boundary stops the geodesics
            path_step: Target panel length of recorded path quadratures
        """
        if radius > 1.0 + metric.pad:
            raise ValueError(f"Disk radius {radius} exceeds the metric pad")
        self.metric = metric
        self.h = float(h_ode)
        self.tau_max = float(tau_max)
        self.radius = float(radius)
        self.panel_steps = max(1, int(round(path_step / self.h)))
        self._curvature: Optional[DiskGridFunction] = None

    @property
    def curvature(self) -> DiskGridFunction:
        """Gauss curvature interpolated from a 65x128 polar grid."""
        if self._curvature is None:
            grid = PolarGrid(64, 128, self.radius)
            self._curvature = DiskGridFunction.from_callable(grid, self.metric.gauss_curvature)
        return self._curvature

    def _rhs(self, state: np.ndarray, integrands: Sequence[Integrand], jacobi: bool) -> np.ndarray:
        x, y, vx, vy = state[0], state[1], state[2], state[3]
        ax, ay = self.metric.geodesic_acceleration(x, y, vx, vy)
        out = [vx, vy, ax, ay]
        for f in integrands:
            out.append(np.broadcast_to(np.asarray(f(x, y, vx, vy), dtype=float), x.shape))
        if jacobi:
            j, jd = state[-2], state[-1]
            out.extend([jd, -self.curvature(x, y) * j])
        return np.array(out)

    def _step(self, state: np.ndarray, h, integrands, jacobi) -> np.ndarray:
        """One classical RK4 step of size h (scalar or per-geodesic array)."""
        k1 = self._rhs(state, integrands, jacobi)
        k2 = self._rhs(state + 0.5 * h * k1, integrands, jacobi)
        k3 = self._rhs(state + 0.5 * h * k2, integrands, jacobi)
        k4 = self._rhs(state + h * k3, integrands, jacobi)
        return state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def _rho(self, state: np.ndarray) -> np.ndarray:
        return self.radius ** 2 - state[0] ** 2 - state[1] ** 2

    def _refine(self, state0: np.ndarray, rho0: np.ndarray, rho1: np.ndarray, h: float,
                integrands, jacobi) -> Tuple[np.ndarray, np.ndarray]:
        """Locate the boundary crossing inside one step by safeguarded Illinois iteration.

        Returns:
            Tuple of (partial step sizes, states at the crossing)
        """
        n = state0.shape[1]
        lo = np.zeros(n)
        hi = np.full(n, h)
        f_lo = np.maximum(rho0, 0.0)
        f_hi = rho1.copy()
        side = np.zeros(n, dtype=int)
        done = np.zeros(n, dtype=bool)
        s_out = np.full(n, h)
        st_out = np.empty_like(state0)
        for it in range(MAX_REFINE_ITER):
            width = hi - lo
            if it % 3 == 2:
                cand = 0.5 * (lo + hi)
            else:
                cand = (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
            cand = np.clip(cand, lo + 1e-3 * width, hi - 1e-3 * width)
            st = self._step(state0, cand, integrands, jacobi)
            f = self._rho(st)
            new = ~done & ((np.abs(f) < RHO_TOL) | (width < 1e-15))
            s_out[new] = cand[new]
            st_out[:, new] = st[:, new]
            done |= new
            if done.all():
                return s_out, st_out
            pos = f > 0
            move_lo = ~done & pos
            move_hi = ~done & ~pos
            f_hi = np.where(move_lo & (side == 1), 0.5 * f_hi, f_hi)
            f_lo = np.where(move_hi & (side == -1), 0.5 * f_lo, f_lo)
            lo = np.where(move_lo, cand, lo)
            f_lo = np.where(move_lo, f, f_lo)
            hi = np.where(move_hi, cand, hi)
            f_hi = np.where(move_hi, f, f_hi)
            side = np.where(move_lo, 1, np.where(move_hi, -1, side))
        raise StepUnderflow(f"Boundary crossing refinement stalled for {int((~done).sum())} geodesic(s)")

    def shoot(self, x, y, vx, vy, integrands: Sequence[Integrand] = (), jacobi: bool = False,
              record: bool = False, allow_trapped: bool = False, keep_trace: bool = False) -> ShotResult:
        """Integrate a batch of geodesics forward until they leave the disk.

        Args:
            x, y, vx, vy: Initial phase points (g-unit velocities), 1-D arrays
            integrands: Functions of (x, y, vx, vy) integrated along the geodesics
            jacobi: Also integrate y'' = -K y with y(0) = 0, y'(0) = 1
            record: Record Simpson panels for later integration of other integrands
            allow_trapped: Mark trapped geodesics instead of raising
            keep_trace: Keep the full state history (small batches only)

        Returns:
            ShotResult with exit points, exit velocities and exit times

        Raises:
            TrappedGeodesic: If a geodesic exceeds tau_max and allow_trapped is False
            StepUnderflow: If a crossing cannot be located
        """
        x, y, vx, vy = (np.atleast_1d(np.asarray(a, dtype=float)).ravel() for a in (x, y, vx, vy))
        n = x.size
        nz = len(integrands)
        rows = [x, y, vx, vy] + [np.zeros(n)] * nz
        if jacobi:
            rows += [np.zeros(n), np.ones(n)]
        state = np.array(rows)

        final = state.copy()
        tau = np.zeros(n)
        trapped = np.zeros(n, dtype=bool)
        jmin = np.full(n, np.inf) if jacobi else None
        nodes: List[Tuple[np.ndarray, ...]] = []
        trace: List[np.ndarray] = [state.copy()] if keep_trace else []

        rho = self._rho(state)
        outgoing = (rho <= 1e-12 * self.radius ** 2) & (x * vx + y * vy >= 0)
        active = np.flatnonzero(~outgoing)
        cur = state[:, active]
        rho_cur = rho[active]
        panel = cur.copy()
        panel_t = np.zeros(active.size)
        t = 0.0
        step = 0
        while active.size:
            nxt = self._step(cur, self.h, integrands, jacobi)
            rho_nxt = self._rho(nxt)
            step += 1
            t_next = t + self.h
            crossed = rho_nxt < 0
            if crossed.any():
                idx = np.flatnonzero(crossed)
                s, st = self._refine(cur[:, idx], rho_cur[idx], rho_nxt[idx], self.h, integrands, jacobi)
                gidx = active[idx]
                final[:, gidx] = st
                tau[gidx] = t + s
                if jacobi:
                    jmin[gidx] = np.minimum(jmin[gidx], st[-2])
                if record:
                    nodes.append(self._panel(panel[:, idx], st, t + s - panel_t[idx], gidx))
            keep = ~crossed
            if jacobi:
                jmin[active[keep]] = np.minimum(jmin[active[keep]], nxt[-2, keep])
            active, cur, rho_cur = active[keep], nxt[:, keep], rho_nxt[keep]
            panel, panel_t = panel[:, keep], panel_t[keep]
            t = t_next
            if keep_trace:
                snap = np.full_like(state, np.nan)
                snap[:, active] = cur
                trace.append(snap)
            if record and active.size and step % self.panel_steps == 0:
                nodes.append(self._panel(panel, cur, t - panel_t, active))
                panel = cur.copy()
                panel_t = np.full(active.size, t)
            if active.size and t > self.tau_max:
                if not allow_trapped:
                    raise TrappedGeodesic(f"{active.size} geodesic(s) did not exit before t={self.tau_max}")
                logger.warning(f"{active.size} geodesic(s) trapped beyond t={self.tau_max}")
                trapped[active] = True
                tau[active] = np.inf
                final[:, active] = cur
                break

        paths = None
        if record:
            paths = self._assemble(nodes, n)
        return ShotResult(final[0], final[1], final[2], final[3], tau, trapped,
                          integrals=final[4:4 + nz] if nz else None, jacobi_min=jmin,
                          paths=paths, state=final, trace=trace)

    @staticmethod
    def _panel(a: np.ndarray, b: np.ndarray, length: np.ndarray, owner: np.ndarray) -> Tuple[np.ndarray, ...]:
        """Simpson nodes of one panel per geodesic with a cubic Hermite midpoint."""
        x0, y0, u0, w0 = a[0], a[1], a[2], a[3]
        x1, y1, u1, w1 = b[0], b[1], b[2], b[3]
        L = length
        xm = 0.5 * (x0 + x1) + L * (u0 - u1) / 8
        ym = 0.5 * (y0 + y1) + L * (w0 - w1) / 8
        safe = np.where(L > 0, L, 1.0)
        um = np.where(L > 0, 1.5 * (x1 - x0) / safe - 0.25 * (u0 + u1), 0.5 * (u0 + u1))
        wm = np.where(L > 0, 1.5 * (y1 - y0) / safe - 0.25 * (w0 + w1), 0.5 * (w0 + w1))
        return (np.concatenate([x0, xm, x1]), np.concatenate([y0, ym, y1]),
                np.concatenate([u0, um, u1]), np.concatenate([w0, wm, w1]),
                np.concatenate([L / 6, 4 * L / 6, L / 6]), np.concatenate([owner, owner, owner]))

    @staticmethod
    def _assemble(nodes, count: int) -> PathQuadrature:
        if not nodes:
            e = np.zeros(0)
            return PathQuadrature(e, e, e, e, e, np.zeros(0, dtype=int), count)
        cols = [np.concatenate([node[i] for node in nodes]) for i in range(6)]
        return PathQuadrature(*cols[:5], owner=cols[5].astype(int), count=count)

    def flow_for(self, x, y, vx, vy, t: float) -> Tuple[np.ndarray, ...]:
        """Flow phase points for time t (t may be negative) ignoring the boundary."""
        x, y, vx, vy = (np.asarray(a, dtype=float) for a in (x, y, vx, vy))
        shape = np.broadcast(x, y, vx, vy).shape
        state = np.array([np.broadcast_to(a, shape).ravel() for a in (x, y, vx, vy)])
        steps = max(1, int(np.ceil(abs(t) / self.h)))
        h = t / steps
        for _ in range(steps):
            state = self._step(state, h, (), False)
        return tuple(s.reshape(shape) for s in state)

    def exit_time(self, x, y, vx, vy) -> np.ndarray:
        return self.shoot(x, y, vx, vy).tau

    def odd_exit_time(self, x, y, vx, vy) -> np.ndarray:
        """tau(x, v) - tau(x, -v)."""
        x, y, vx, vy = (np.atleast_1d(np.asarray(a, dtype=float)).ravel() for a in (x, y, vx, vy))
        both = self.shoot(np.concatenate([x, x]), np.concatenate([y, y]),
                          np.concatenate([vx, -vx]), np.concatenate([vy, -vy])).tau
        return both[:x.size] - both[x.size:]

    def integrate_geodesic(self, p: PhasePoint, direction: str = 'forward',
                           jacobi: bool = False) -> GeodesicTrace:
        """Integrate one geodesic to the boundary, keeping every sample.

        The backward trace runs the forward flow from (x, -v) and reports
        negative times with velocities of the original orientation.
        """
        if direction not in ('forward', 'backward'):
            raise ValueError(f"Unknown direction '{direction}'")
        sign = 1.0 if direction == 'forward' else -1.0
        v = sign * p.v
        res = self.shoot(p.x[0], p.x[1], v[0], v[1], jacobi=jacobi, keep_trace=True)
        samples = [s[:, 0] for s in res.trace if not np.isnan(s[0, 0])]
        end = np.array([res.exit_x[0], res.exit_y[0], res.exit_vx[0], res.exit_vy[0]])
        tau = float(res.tau[0])
        states = np.array(samples)
        times = self.h * np.arange(len(samples))
        if tau > 0:
            times = np.append(times, tau)
            states = np.vstack([states, res.state[:, 0]])
        positions = states[:, :2]
        velocities = sign * states[:, 2:4]
        jac = states[:, -2] if jacobi else None
        exit_phase = PhasePoint(end[:2], sign * end[2:4])
        return GeodesicTrace(sign * times, positions, velocities, tau, exit_phase, jac)

    def jacobi_scalar(self, p: PhasePoint) -> Tuple[np.ndarray, np.ndarray]:
        """Scalar Jacobi field y'' + K y = 0, y(0) = 0, y'(0) = 1 along the geodesic.

        Returns:
            Tuple of (times, y samples)
        """
        trace = self.integrate_geodesic(p, 'forward', jacobi=True)
        return trace.times, trace.jacobi


def incidence_samples(nalpha: int, guard: float) -> np.ndarray:
    """Midpoint incidence angles on (-pi/2 + guard, pi/2 - guard) plus the normal direction 0."""
    a = np.pi / 2 - guard
    mid = -a + (np.arange(nalpha) + 0.5) * (2 * a / nalpha)
    return np.union1d(mid, [0.0])


def certify_simple(flow: GeodesicFlow, nbeta: int = 64, nalpha: int = 64, guard: float = 0.05,
                   nconvex: int = 128) -> SimplicityReport:
    """Check strict convexity, non-trapping and absence of conjugate points.

    Convexity uses the second fundamental form II(T, T) = <nabla_T T, nu>_g
    with the inward normal at ``nconvex`` boundary points. Trapping and
    conjugate points are checked over an nbeta x nalpha fan of inward
    geodesics on a symmetric incidence grid that contains the normal direction.
    """
    from boundary_geom import BoundaryGeometry

    geom = BoundaryGeometry(flow.metric, flow.radius)
    beta = 2 * np.pi * np.arange(nconvex) / nconvex
    second = geom.second_fundamental_form(beta)
    convex = bool(np.min(second) > 0)

    bb, aa = np.meshgrid(2 * np.pi * np.arange(nbeta) / nbeta, incidence_samples(nalpha, guard), indexing='ij')
    x, y, vx, vy = geom.phase_point(bb.ravel(), aa.ravel())
    res = flow.shoot(x, y, vx, vy, jacobi=True, allow_trapped=True)
    finite = res.tau[~res.trapped]
    tau_max = float(np.max(finite)) if finite.size else float('inf')
    conj = res.conjugate & ~res.trapped
    report = SimplicityReport(
        convex=convex,
        nontrapping=not bool(res.trapped.any()),
        no_conjugate=not bool(conj.any()),
        tau_max_observed=tau_max,
        min_second_fundamental_form=float(np.min(second)),
        conjugate_count=int(conj.sum()),
        trapped_count=int(res.trapped.sum()),
    )
    logger.info(f"Simplicity of '{flow.metric.kind}': convex={report.convex}, "
                f"nontrapping={report.nontrapping}, no_conjugate={report.no_conjugate}, "
                f"tau_max={report.tau_max_observed:.6f}")
    return report
