"""Boundary geometry: fan coordinates, scattering relation, boundary distance."""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Optional, Tuple

import numpy as np
from scipy.interpolate import RectBivariateSpline

from errors import GlancingClip, NoBracket, OracleFailure
from geodesic_flow import GeodesicFlow, PathQuadrature
from metric_core import MetricField

logger = logging.getLogger(__name__)

SCAN_DIRECTIONS = 128
SCAN_MARGIN = 1e-4
SHOOT_TOL = 1e-10
RICHARDSON_S0 = 0.1


def wrap_angle(a) -> np.ndarray:
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2 * np.pi)


class BoundaryGeometry:
    """Boundary frame of a metric on the disk of a given radius.

    T is the g-unit counterclockwise tangent and nu the g-unit inward normal.
    A fan coordinate (beta, alpha) denotes the boundary point x(beta) with the
    direction cos(alpha) nu + sin(alpha) T.
    """

    def __init__(self, metric: MetricField, radius: float = 1.0):
        self.metric = metric
        self.radius = float(radius)

    def point(self, beta) -> Tuple[np.ndarray, np.ndarray]:
        beta = np.asarray(beta, dtype=float)
        return self.radius * np.cos(beta), self.radius * np.sin(beta)

    def frame(self, beta) -> Tuple[Tuple, Tuple, np.ndarray]:
        """Return (T, nu, arc speed |c'(beta)|_g) at boundary angles beta."""
        beta = np.asarray(beta, dtype=float)
        x, y = self.point(beta)
        cx, cy = -self.radius * np.sin(beta), self.radius * np.cos(beta)
        speed = self.metric.norm(x, y, (cx, cy))
        t = (cx / speed, cy / speed)
        n0 = (-np.cos(beta), -np.sin(beta))
        proj = self.metric.inner(x, y, n0, t)
        n = (n0[0] - proj * t[0], n0[1] - proj * t[1])
        nn = self.metric.norm(x, y, n)
        return t, (n[0] / nn, n[1] / nn), speed

    def phase_point(self, beta, alpha) -> Tuple[np.ndarray, ...]:
        """Phase point (x, y, vx, vy) of fan coordinates (beta, alpha)."""
        beta, alpha = np.broadcast_arrays(np.asarray(beta, dtype=float), np.asarray(alpha, dtype=float))
        x, y = self.point(beta)
        t, n, _ = self.frame(beta)
        ca, sa = np.cos(alpha), np.sin(alpha)
        return x, y, ca * n[0] + sa * t[0], ca * n[1] + sa * t[1]

    def fan_coordinates(self, x, y, vx, vy) -> Tuple[np.ndarray, np.ndarray]:
        """Inverse of phase_point for boundary phase points; alpha in (-pi, pi]."""
        beta = np.mod(np.arctan2(y, x), 2 * np.pi)
        t, n, _ = self.frame(beta)
        bx, by = self.point(beta)
        along_t = self.metric.inner(bx, by, (vx, vy), t)
        along_n = self.metric.inner(bx, by, (vx, vy), n)
        return beta, np.arctan2(along_t, along_n)

    def second_fundamental_form(self, beta) -> np.ndarray:
        """II(T, T) = <nabla_T T, nu>_g; positive means strictly convex."""
        beta = np.asarray(beta, dtype=float)
        x, y = self.point(beta)
        cx, cy = -y, x
        gam = self.metric.christoffel(x, y)
        ax, ay = (-c + gam[i, 0, 0] * cx * cx + 2 * gam[i, 0, 1] * cx * cy + gam[i, 1, 1] * cy * cy
                  for i, c in enumerate((x, y)))
        _, n, speed = self.frame(beta)
        return self.metric.inner(x, y, (ax, ay), n) / speed ** 2

    def arc_length(self, beta1, beta2, nodes: int = 32) -> np.ndarray:
        """g-length of the shorter boundary arc from beta1 to beta2."""
        beta1 = np.asarray(beta1, dtype=float)
        delta = wrap_angle(np.asarray(beta2, dtype=float) - beta1)
        s, w = np.polynomial.legendre.leggauss(nodes)
        b = beta1[..., None] + 0.5 * delta[..., None] * (s + 1)
        _, _, speed = self.frame(b)
        return 0.5 * np.abs(delta) * np.sum(w * speed, axis=-1)


@dataclass(eq=False)
class FanGrid:
    """Discretization of the inward boundary directions, optionally with values.

    Boundary angles are periodic nodes beta_i = 2 pi i / nbeta; incidence
    angles are midpoints of nalpha cells covering (-a, a), a = pi/2 - guard.
    Quadrature weights discretize mu dSigma = cos(alpha) |c'|_g dbeta dalpha.
    """

    geometry: BoundaryGeometry
    nbeta: int
    nalpha: int
    guard: float = 0.05
    values: Optional[np.ndarray] = None
    _spline: Optional[RectBivariateSpline] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=float)
            if self.values.shape != self.shape:
                raise ValueError(f"Expected values of shape {self.shape}, got {self.values.shape}")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nbeta, self.nalpha)

    @property
    def half_width(self) -> float:
        return np.pi / 2 - self.guard

    @property
    def beta(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.nbeta) / self.nbeta

    @property
    def alpha(self) -> np.ndarray:
        a = self.half_width
        return -a + (np.arange(self.nalpha) + 0.5) * (2 * a / self.nalpha)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.beta, self.alpha, indexing='ij')

    def weights(self) -> np.ndarray:
        """mu-weighted quadrature weights of shape (nbeta, nalpha)."""
        _, _, speed = self.geometry.frame(self.beta)
        d_beta = 2 * np.pi / self.nbeta
        d_alpha = 2 * self.half_width / self.nalpha
        return np.outer(speed * d_beta, np.cos(self.alpha) * d_alpha)

    def phase_points(self) -> Tuple[np.ndarray, ...]:
        bb, aa = self.mesh()
        return self.geometry.phase_point(bb.ravel(), aa.ravel())

    def with_values(self, values) -> 'FanGrid':
        return replace(self, values=np.asarray(values, dtype=float).reshape(self.shape))

    def from_callable(self, f: Callable) -> 'FanGrid':
        """Sample f(beta, alpha) at the fan nodes."""
        bb, aa = self.mesh()
        return self.with_values(np.broadcast_to(f(bb, aa), self.shape))

    def zeros(self) -> 'FanGrid':
        return self.with_values(np.zeros(self.shape))

    def _require_values(self) -> np.ndarray:
        if self.values is None:
            raise ValueError("Fan grid carries no values")
        return self.values

    def inner(self, other: 'FanGrid') -> float:
        """L2_mu inner product."""
        return float(np.sum(self.weights() * self._require_values() * other._require_values()))

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    @property
    def spline(self) -> RectBivariateSpline:
        if self._spline is None:
            vals = self._require_values()
            pad = 3
            b = self.beta
            b_axis = np.concatenate([b[-pad:] - 2 * np.pi, b, b[:pad + 1] + 2 * np.pi])
            block = np.concatenate([vals[-pad:], vals, vals[:pad + 1]], axis=0)
            k = min(3, self.nalpha - 1)
            self._spline = RectBivariateSpline(b_axis, self.alpha, block, kx=3, ky=k, s=0)
        return self._spline

    def interpolate(self, beta, alpha) -> Tuple[np.ndarray, np.ndarray]:
        """Evaluate at arbitrary fan coordinates.

        Alpha beyond the outermost nodes is clamped (flat extrapolation).

        Returns:
            Tuple of (values, clipped) where clipped marks points outside the guard band
        """
        beta = np.mod(np.asarray(beta, dtype=float), 2 * np.pi)
        alpha = np.asarray(alpha, dtype=float)
        shape = np.broadcast(beta, alpha).shape
        beta, alpha = np.broadcast_to(beta, shape), np.broadcast_to(alpha, shape)
        clipped = np.abs(alpha) > self.half_width + 1e-12
        a_nodes = self.alpha
        a = np.clip(alpha, a_nodes[0], a_nodes[-1])
        out = self.spline.ev(beta.ravel(), a.ravel()).reshape(shape)
        return out, clipped

    def rows(self) -> Iterator[Tuple[float, float, float]]:
        """Yield (beta, alpha, value) rows for CSV export."""
        vals = self._require_values()
        for i, b in enumerate(self.beta):
            for j, a in enumerate(self.alpha):
                yield float(b), float(a), float(vals[i, j])

    def _binary(self, other, op) -> 'FanGrid':
        rhs = other._require_values() if isinstance(other, FanGrid) else other
        return self.with_values(op(self._require_values(), rhs))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    def __rmul__(self, other):
        return self._binary(other, np.multiply)

    def __neg__(self):
        return self.with_values(-self._require_values())


@dataclass
class ScatteringTable:
    """Scattering relation sampled on a fan.

    beta_out is the exit angle, alpha_rev the fan coordinate of the reversed
    exit direction, tau the exit time; arrays have the fan's shape.
    """

    fan: FanGrid
    beta_out: np.ndarray
    alpha_rev: np.ndarray
    tau: np.ndarray
    exit_vx: np.ndarray
    exit_vy: np.ndarray
    paths: Optional[PathQuadrature] = None

    def integrate(self, integrand) -> np.ndarray:
        """X-ray of an SM integrand on the fan using the recorded paths."""
        if self.paths is None:
            raise ValueError("Scattering table was built without recorded paths")
        return self.paths.integrate(integrand).reshape(self.fan.shape)


def scatter(flow: GeodesicFlow, fan: FanGrid, record: bool = False) -> ScatteringTable:
    """Scattering relation on every node of a fan."""
    geom = fan.geometry
    x, y, vx, vy = fan.phase_points()
    res = flow.shoot(x, y, vx, vy, record=record)
    b_out, a_rev = geom.fan_coordinates(res.exit_x, res.exit_y, -res.exit_vx, -res.exit_vy)
    logger.debug(f"Scattered {x.size} fan geodesics, max tau {np.max(res.tau):.4f}")
    return ScatteringTable(fan, b_out.reshape(fan.shape), a_rev.reshape(fan.shape),
                           res.tau.reshape(fan.shape), res.exit_vx.reshape(fan.shape),
                           res.exit_vy.reshape(fan.shape), res.paths)


def scattering_relation(flow: GeodesicFlow, beta: float, alpha: float,
                        guard: float = 0.05) -> Tuple[float, float, float]:
    """Scattering relation of one fan coordinate.

    Returns:
        Tuple of (exit angle beta', fan coordinate of the reversed exit direction, tau)

    Raises:
        GlancingClip: If alpha lies outside the guard band
    """
    if abs(alpha) > np.pi / 2 - guard:
        raise GlancingClip(f"Incidence angle {alpha:.4f} is inside the glancing guard band")
    geom = BoundaryGeometry(flow.metric, flow.radius)
    x, y, vx, vy = geom.phase_point(beta, alpha)
    res = flow.shoot(x, y, vx, vy)
    b_out, a_rev = geom.fan_coordinates(res.exit_x, res.exit_y, -res.exit_vx, -res.exit_vy)
    return float(b_out[0]), float(a_rev[0]), float(res.tau[0])


@dataclass
class DistanceResult:
    """Outcome of one boundary distance computation."""

    length: float
    alpha: Optional[float]
    flagged: bool = False


def boundary_distances(flow: GeodesicFlow, beta1, beta2) -> list:
    """Boundary distances for many pairs by shooting.

    For every pair a scan of 128 incidence angles brackets the target exit
    angle, then an Illinois iteration on the incidence angle refines the exit
    to within 1e-10. Pairs without a bracket fall back to the g-length of the
    boundary arc and are flagged.

    Returns:
        List of DistanceResult, one per pair
    """
    geom = BoundaryGeometry(flow.metric, flow.radius)
    beta1 = np.atleast_1d(np.asarray(beta1, dtype=float))
    beta2 = np.atleast_1d(np.asarray(beta2, dtype=float))
    npairs = beta1.size
    target = np.mod(beta2 - beta1, 2 * np.pi)
    results: list = [None] * npairs

    same = (target < 1e-14) | (2 * np.pi - target < 1e-14)
    for k in np.flatnonzero(same):
        results[k] = DistanceResult(0.0, None)
    todo = np.flatnonzero(~same)
    if todo.size == 0:
        return results

    a_max = np.pi / 2 - SCAN_MARGIN
    scan = np.linspace(-a_max, a_max, SCAN_DIRECTIONS)

    def mismatch(b1, alpha, tgt):
        x, y, vx, vy = geom.phase_point(b1, alpha)
        res = flow.shoot(x, y, vx, vy)
        reached = np.mod(np.arctan2(res.exit_y, res.exit_x) - b1, 2 * np.pi)
        return reached - tgt, res.tau

    bb, aa = np.meshgrid(beta1[todo], scan, indexing='ij')
    tt = np.broadcast_to(target[todo][:, None], bb.shape)
    f_scan, _ = mismatch(bb.ravel(), aa.ravel(), tt.ravel())
    f_scan = f_scan.reshape(bb.shape)

    # exit angle decreases with alpha, so look for f going from >= 0 to < 0
    sign_change = (f_scan[:, :-1] >= 0) & (f_scan[:, 1:] < 0)
    has = sign_change.any(axis=1)
    for k in todo[~has]:
        err = NoBracket(f"No shooting direction reaches beta={beta2[k]:.6f} from beta={beta1[k]:.6f}")
        length = float(geom.arc_length(beta1[k], beta2[k]))
        logger.warning(f"{err}; falling back to boundary arc length {length:.6f}")
        results[k] = DistanceResult(length, None, flagged=True)
    idx = todo[has]
    if idx.size == 0:
        return results
    col = np.argmax(sign_change[has], axis=1)
    lo = scan[col]
    hi = scan[col + 1]
    f_lo = f_scan[has, col]
    f_hi = f_scan[has, col + 1]
    b1, tgt = beta1[idx], target[idx]
    alpha = 0.5 * (lo + hi)
    tau = np.zeros(idx.size)
    done = np.zeros(idx.size, dtype=bool)
    side = np.zeros(idx.size, dtype=int)
    for it in range(100):
        cand = 0.5 * (lo + hi) if it % 4 == 3 else (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
        width = hi - lo
        cand = np.where(done, alpha, np.clip(cand, lo + 1e-6 * width, hi - 1e-6 * width))
        f, t = mismatch(b1, cand, tgt)
        newly = ~done & ((np.abs(f) < SHOOT_TOL) | (width < 1e-15))
        alpha = np.where(done, alpha, cand)
        tau = np.where(done, tau, t)
        done |= newly
        if done.all():
            break
        pos = (f >= 0) & ~done
        neg = (f < 0) & ~done
        f_hi = np.where(pos & (side == 1), 0.5 * f_hi, f_hi)
        f_lo = np.where(neg & (side == -1), 0.5 * f_lo, f_lo)
        lo, f_lo = np.where(pos, cand, lo), np.where(pos, f, f_lo)
        hi, f_hi = np.where(neg, cand, hi), np.where(neg, f, f_hi)
        side = np.where(pos, 1, np.where(neg, -1, side))
    else:
        logger.warning(f"Shooting did not converge for {int((~done).sum())} pair(s)")
    for k, a, t, ok in zip(idx, alpha, tau, done):
        results[k] = DistanceResult(float(t), float(a), flagged=not ok)
    return results


def boundary_distance(flow: GeodesicFlow, beta1: float, beta2: float) -> float:
    """Riemannian distance between boundary points x(beta1) and x(beta2)."""
    return boundary_distances(flow, [beta1], [beta2])[0].length


def recover_boundary_metric(distance: Callable[[float, float], float], beta: float,
                            s0: float = RICHARDSON_S0, radius: float = 1.0) -> float:
    """Estimate the g-norm of the Euclidean-unit boundary tangent at beta.

    q(s) = d(beta, beta + s) / (radius * s) is sampled at s0, s0/2, s0/4 and
    extrapolated to s = 0 by two Richardson sweeps.

    Raises:
        OracleFailure: If the distance oracle fails
    """
    try:
        q = [distance(beta, beta + s) / (radius * s) for s in (s0, s0 / 2, s0 / 4)]
    except OracleFailure:
        raise
    except Exception as e:
        raise OracleFailure(f"Boundary distance oracle failed near beta={beta}: {e}") from e
    r1 = [2 * q[1] - q[0], 2 * q[2] - q[1]]
    return float((4 * r1[1] - r1[0]) / 3)


def santalo_volume(flow: GeodesicFlow, fan: FanGrid, table: Optional[ScatteringTable] = None) -> float:
    """Vol_g(M) = (1 / 2 pi) * integral of tau over the inward boundary directions with weight mu."""
    table = table or scatter(flow, fan)
    return float(np.sum(fan.weights() * table.tau) / (2 * np.pi))
