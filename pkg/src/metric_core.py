"""Riemannian metrics on the closed unit disk, diffeomorphisms and pullbacks."""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from errors import DomainEscape, GaugeNotInjective, PositivityViolation
from models import DiffeoSpecModel, MetricSpecModel

logger = logging.getLogger(__name__)

H_FD = 1e-5
DEFAULT_PAD = 0.3
# Index of the stored component for (i, j): g11 -> 0, g12 = g21 -> 1, g22 -> 2.
COMPONENT = ((0, 1), (1, 2))

Components = Tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass(frozen=True, eq=False)
class MetricField:
    """A metric g on the closed unit disk (plus an evaluation pad).

    Attributes:
        components: Vectorized map (x, y) -> (g11, g12, g22)
        gradient: Optional analytic first derivatives (x, y) -> array (2, 3, ...)
            where [a, c] is the derivative of component c along x_a
        kind: euclidean, conformal, sheared, pullback or custom
        regularity: Differentiability tag k >= 2
        pad: Radius margin beyond the unit circle where g may be evaluated
        conformal_factor: Optional (x, y) -> (lam, lam_x, lam_y, laplacian lam)
            for metrics of the form exp(2 lam) times the identity
        params: Free-form description echoed into reports
    """

    components: Callable[[np.ndarray, np.ndarray], Components]
    gradient: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    kind: str = 'custom'
    regularity: int = 2
    pad: float = DEFAULT_PAD
    conformal_factor: Optional[Callable] = None
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.regularity < 2:
            raise ValueError(f"Metric regularity must be at least 2, got {self.regularity}")

    def evaluate(self, x, y, check: bool = True) -> Components:
        """Evaluate (g11, g12, g22) at points (x, y).

        Raises:
            DomainEscape: If a point lies outside the evaluation pad
            PositivityViolation: If g is not positive definite at a point
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if check and np.any(np.hypot(x, y) > 1.0 + self.pad + 1e-9):
            raise DomainEscape(f"Point outside the evaluable disk of radius {1.0 + self.pad}")
        g11, g12, g22 = self.components(x, y)
        shape = np.broadcast(x, y).shape
        g11, g12, g22 = (np.broadcast_to(np.asarray(c, dtype=float), shape) for c in (g11, g12, g22))
        if check:
            det = g11 * g22 - g12 * g12
            if np.any(g11 <= 0) or np.any(det <= 0):
                raise PositivityViolation(f"Metric '{self.kind}' is not positive definite")
        return g11, g12, g22

    def matrix(self, x, y) -> np.ndarray:
        """Return g as an array of shape (..., 2, 2)."""
        g11, g12, g22 = self.evaluate(x, y)
        return np.stack([np.stack([g11, g12], -1), np.stack([g12, g22], -1)], -2)

    def determinant(self, x, y) -> np.ndarray:
        g11, g12, g22 = self.evaluate(x, y)
        return g11 * g22 - g12 * g12

    def volume_density(self, x, y) -> np.ndarray:
        return np.sqrt(self.determinant(x, y))

    def inverse(self, x, y) -> Components:
        """Return the inverse components (g^11, g^12, g^22)."""
        g11, g12, g22 = self.evaluate(x, y)
        det = g11 * g22 - g12 * g12
        return g22 / det, -g12 / det, g11 / det

    def derivatives(self, x, y) -> np.ndarray:
        """First derivatives of the components, shape (2, 3, ...)."""
        if self.gradient is not None:
            shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
            return np.broadcast_to(np.asarray(self.gradient(x, y), dtype=float), (2, 3) + shape)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        h = H_FD
        dx = (np.array(self.evaluate(x + h, y, check=False))
              - np.array(self.evaluate(x - h, y, check=False))) / (2 * h)
        dy = (np.array(self.evaluate(x, y + h, check=False))
              - np.array(self.evaluate(x, y - h, check=False))) / (2 * h)
        return np.stack([dx, dy])

    def christoffel(self, x, y) -> np.ndarray:
        """Christoffel symbols Gamma[i, j, k] of the Levi-Civita connection.

        Returns:
            Array of shape (2, 2, 2, ...), symmetric in the last two indices
        """
        h11, h12, h22 = self.inverse(x, y)
        ginv = ((h11, h12), (h12, h22))
        dg = self.derivatives(x, y)

        def d(a, i, j):
            return dg[a, COMPONENT[i][j]]

        lower = [[[0.5 * (d(j, l, k) + d(k, l, j) - d(l, j, k)) for k in range(2)]
                  for j in range(2)] for l in range(2)]
        return np.array([[[ginv[i][0] * lower[0][j][k] + ginv[i][1] * lower[1][j][k]
                           for k in range(2)] for j in range(2)] for i in range(2)])

    def geodesic_acceleration(self, x, y, vx, vy) -> Tuple[np.ndarray, np.ndarray]:
        """Right-hand side -Gamma^i_jk v^j v^k of the geodesic equation."""
        gam = self.christoffel(x, y)
        ax = -(gam[0, 0, 0] * vx * vx + 2 * gam[0, 0, 1] * vx * vy + gam[0, 1, 1] * vy * vy)
        ay = -(gam[1, 0, 0] * vx * vx + 2 * gam[1, 0, 1] * vx * vy + gam[1, 1, 1] * vy * vy)
        return ax, ay

    def inner(self, x, y, u: Tuple, v: Tuple) -> np.ndarray:
        """g-inner product of vectors u = (u1, u2) and v = (v1, v2) at (x, y)."""
        g11, g12, g22 = self.evaluate(x, y)
        return g11 * u[0] * v[0] + g12 * (u[0] * v[1] + u[1] * v[0]) + g22 * u[1] * v[1]

    def norm(self, x, y, u: Tuple) -> np.ndarray:
        return np.sqrt(self.inner(x, y, u, u))

    def gauss_curvature(self, x, y, analytic: bool = True) -> np.ndarray:
        """Gauss curvature K.

        Uses K = -exp(-2 lam) * laplacian(lam) when a conformal factor is known
        and ``analytic`` is set, otherwise differentiates the Christoffel
        symbols numerically.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if analytic and self.conformal_factor is not None:
            lam, _, _, lap = self.conformal_factor(x, y)
            return -np.exp(-2 * lam) * lap
        h = 1e-4
        gam = self.christoffel(x, y)
        d1 = (self.christoffel(x + h, y) - self.christoffel(x - h, y)) / (2 * h)
        d2 = (self.christoffel(x, y + h) - self.christoffel(x, y - h)) / (2 * h)
        riem = [d1[m, 1, 1] - d2[m, 0, 1]
                + sum(gam[n, 1, 1] * gam[m, 0, n] - gam[n, 0, 1] * gam[m, 1, n] for n in range(2))
                for m in range(2)]
        g11, g12, g22 = self.evaluate(x, y)
        return (g11 * riem[0] + g12 * riem[1]) / (g11 * g22 - g12 * g12)


def polar_components(g: MetricField, theta, r) -> Components:
    """Components (g_theta_theta, g_theta_r, g_rr) of g in polar coordinates."""
    theta = np.asarray(theta, dtype=float)
    r = np.asarray(r, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    g11, g12, g22 = g.evaluate(r * c, r * s)
    et = (-r * s, r * c)
    er = (c, s)

    def q(u, v):
        return g11 * u[0] * v[0] + g12 * (u[0] * v[1] + u[1] * v[0]) + g22 * u[1] * v[1]

    return q(et, et), q(et, er), q(er, er)


def euclidean(pad: float = DEFAULT_PAD) -> MetricField:
    """The flat metric."""
    def components(x, y):
        one = np.ones(np.broadcast(x, y).shape)
        return one, 0.0 * one, one

    def gradient(x, y):
        return np.zeros((2, 3) + np.broadcast(np.asarray(x), np.asarray(y)).shape)

    def factor(x, y):
        z = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        return z, z, z, z

    return MetricField(components, gradient, kind='euclidean', regularity=17, pad=pad,
                       conformal_factor=factor, params={'pad': pad})


def conformal(c: float, profile: str = 'constant', pad: float = DEFAULT_PAD) -> MetricField:
    """Conformal metric exp(2 lam) times the identity.

    Args:
        c: Amplitude of lam
        profile: 'constant' for lam = c or 'radial' for lam = c (1 - r^2)
        pad: Evaluation pad
    """
    if profile not in ('constant', 'radial'):
        raise ValueError(f"Unknown conformal profile '{profile}'")

    def factor(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        if profile == 'constant':
            z = np.zeros(shape)
            return np.full(shape, float(c)), z, z, z
        return (c * (1.0 - x * x - y * y) + np.zeros(shape), -2.0 * c * x + np.zeros(shape),
                -2.0 * c * y + np.zeros(shape), np.full(shape, -4.0 * c))

    def components(x, y):
        e = np.exp(2 * factor(x, y)[0])
        return e, 0.0 * e, e

    def gradient(x, y):
        lam, lx, ly, _ = factor(x, y)
        e = np.exp(2 * lam)
        z = np.zeros_like(e)
        return np.array([[2 * lx * e, z, 2 * lx * e], [2 * ly * e, z, 2 * ly * e]])

    return MetricField(components, gradient, kind='conformal', regularity=17, pad=pad,
                       conformal_factor=factor, params={'c': c, 'profile': profile, 'pad': pad})


def sheared(eps: float = 0.1, pad: float = DEFAULT_PAD) -> MetricField:
    """Identity plus eps * exp(-|x|^2 / 2) * (dx dy + dy dx)."""
    if abs(eps) >= 1.0:
        raise ValueError(f"Shear amplitude must be below 1, got {eps}")

    def components(x, y):
        b = eps * np.exp(-0.5 * (x * x + y * y))
        one = np.ones_like(b)
        return one, b, one

    def gradient(x, y):
        b = eps * np.exp(-0.5 * (x * x + y * y))
        z = np.zeros_like(b)
        return np.array([[z, -x * b, z], [z, -y * b, z]])

    return MetricField(components, gradient, kind='sheared', regularity=17, pad=pad,
                       params={'eps': eps, 'pad': pad})


@dataclass(frozen=True, eq=False)
class DiskDiffeo:
    """A diffeomorphism of (a neighbourhood of) the closed unit disk.

    Attributes:
        forward: Vectorized map (x, y) -> (X, Y)
        jacobian_map: Optional analytic Jacobian (x, y) -> array (2, 2, ...)
        inverse_map: Optional analytic inverse; Newton iteration otherwise
        boundary_fixing: Whether the map is the identity on the unit circle
        name: Label for logs and reports
    """

    forward: Callable
    jacobian_map: Optional[Callable] = None
    inverse_map: Optional[Callable] = None
    boundary_fixing: bool = True
    name: str = 'custom'

    def __call__(self, x, y) -> Tuple[np.ndarray, np.ndarray]:
        return self.forward(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def jacobian(self, x, y) -> np.ndarray:
        """Jacobian J[i, j] = d forward_i / d x_j, shape (2, 2, ...)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.jacobian_map is not None:
            shape = np.broadcast(x, y).shape
            return np.broadcast_to(np.asarray(self.jacobian_map(x, y), dtype=float), (2, 2) + shape)
        h = 1e-6
        dx = (np.array(self(x + h, y)) - np.array(self(x - h, y))) / (2 * h)
        dy = (np.array(self(x, y + h)) - np.array(self(x, y - h))) / (2 * h)
        return np.stack([dx, dy], axis=1)

    def determinant(self, x, y) -> np.ndarray:
        j = self.jacobian(x, y)
        return j[0, 0] * j[1, 1] - j[0, 1] * j[1, 0]

    def inverse(self, X, Y, tol: float = 1e-13, max_iter: int = 50) -> Tuple[np.ndarray, np.ndarray]:
        """Invert the map, by Newton iteration when no inverse is supplied."""
        if self.inverse_map is not None:
            return self.inverse_map(np.asarray(X, dtype=float), np.asarray(Y, dtype=float))
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        x, y = X.copy(), Y.copy()
        for _ in range(max_iter):
            fx, fy = self(x, y)
            rx, ry = fx - X, fy - Y
            if np.max(np.abs(rx), initial=0.0) < tol and np.max(np.abs(ry), initial=0.0) < tol:
                break
            j = self.jacobian(x, y)
            det = j[0, 0] * j[1, 1] - j[0, 1] * j[1, 0]
            x = x - (j[1, 1] * rx - j[0, 1] * ry) / det
            y = y - (-j[1, 0] * rx + j[0, 0] * ry) / det
        return x, y

    def verify(self, nr: int = 32, ntheta: int = 64) -> Tuple[float, float]:
        """Check boundary fixing and orientation on a polar verification grid.

        Returns:
            Tuple of (max boundary displacement, min Jacobian determinant)
        """
        theta = 2 * np.pi * np.arange(ntheta) / ntheta
        bx, by = self(np.cos(theta), np.sin(theta))
        displacement = float(np.max(np.hypot(bx - np.cos(theta), by - np.sin(theta))))
        rr, tt = np.meshgrid(np.arange(nr + 1) / nr, theta, indexing='ij')
        min_det = float(np.min(self.determinant(rr * np.cos(tt), rr * np.sin(tt))))
        if self.boundary_fixing and displacement > 1e-10:
            logger.warning(f"Diffeomorphism '{self.name}' moves the boundary by {displacement:.3e}")
        if min_det <= 0:
            logger.warning(f"Diffeomorphism '{self.name}' is not orientation preserving (min det {min_det:.3e})")
        return displacement, min_det


def identity_diffeo() -> DiskDiffeo:
    def jac(x, y):
        one = np.ones(np.broadcast(x, y).shape)
        return np.array([[one, 0 * one], [0 * one, one]])

    return DiskDiffeo(lambda x, y: (x + 0.0, y + 0.0), jac, lambda x, y: (x + 0.0, y + 0.0),
                      boundary_fixing=True, name='identity')


def rotation(angle: float) -> DiskDiffeo:
    c, s = np.cos(angle), np.sin(angle)

    def jac(x, y):
        one = np.ones(np.broadcast(x, y).shape)
        return np.array([[c * one, -s * one], [s * one, c * one]])

    return DiskDiffeo(lambda x, y: (c * x - s * y, s * x + c * y), jac,
                      lambda x, y: (c * x + s * y, -s * x + c * y),
                      boundary_fixing=bool(np.isclose(np.mod(angle, 2 * np.pi), 0.0)),
                      name=f'rotation({angle:g})')


def smooth_bump(r, r_in: float, r_out: float) -> Tuple[np.ndarray, np.ndarray]:
    """C-infinity bump on (r_in, r_out) with peak 1, and its derivative."""
    r = np.asarray(r, dtype=float)
    width = r_out - r_in
    s = (2 * r - r_in - r_out) / width
    inside = np.abs(s) < 1
    s_in = np.where(inside, s, 0.0)
    one_minus = 1 - s_in * s_in
    b = np.where(inside, np.exp(1 - 1 / one_minus), 0.0)
    db = np.where(inside, b * (-2 * s_in / one_minus ** 2) * (2 / width), 0.0)
    return b, db


def radial_bump(amp: float = 0.05, r_in: float = 0.2, r_out: float = 0.8) -> DiskDiffeo:
    """Radial displacement x -> x + amp * b(|x|) * x / |x| supported in r_in < |x| < r_out."""
    if r_out >= 1.0:
        raise ValueError(f"Bump support must stay inside the disk, got r_out={r_out}")

    def radius_map(r):
        b, db = smooth_bump(r, r_in, r_out)
        return r + amp * b, 1 + amp * db

    def forward(x, y):
        r = np.hypot(x, y)
        big_r, _ = radius_map(r)
        scale = np.where(r > 0, big_r / np.where(r > 0, r, 1.0), 1.0)
        return x * scale, y * scale

    def jac(x, y):
        r = np.hypot(x, y)
        safe = np.where(r > 0, r, 1.0)
        big_r, dr = radius_map(r)
        ratio = np.where(r > 0, big_r / safe, 1.0)
        extra = np.where(r > 0, (dr - ratio) / safe ** 2, 0.0)
        return np.array([[ratio + extra * x * x, extra * x * y],
                         [extra * x * y, ratio + extra * y * y]])

    return DiskDiffeo(forward, jac, None, boundary_fixing=True, name=f'radial(amp={amp:g})')


def compose(outer: DiskDiffeo, inner: DiskDiffeo) -> DiskDiffeo:
    """The composite outer after inner."""

    def forward(x, y):
        return outer(*inner(x, y))

    def jac(x, y):
        jo = outer.jacobian(*inner(x, y))
        ji = inner.jacobian(x, y)
        return np.einsum('ik...,kj...->ij...', jo, ji)

    def inv(X, Y):
        return inner.inverse(*outer.inverse(X, Y))

    return DiskDiffeo(forward, jac, inv,
                      boundary_fixing=outer.boundary_fixing and inner.boundary_fixing,
                      name=f'{outer.name}*{inner.name}')


def pullback(psi: DiskDiffeo, g: MetricField) -> MetricField:
    """Pullback metric DPsi^T g(Psi) DPsi; derivatives by finite differences."""

    def components(x, y):
        j = psi.jacobian(x, y)
        px, py = psi(x, y)
        g11, g12, g22 = g.evaluate(px, py)
        a = (g11 * j[0, 0] + g12 * j[1, 0], g12 * j[0, 0] + g22 * j[1, 0])
        b = (g11 * j[0, 1] + g12 * j[1, 1], g12 * j[0, 1] + g22 * j[1, 1])
        return (j[0, 0] * a[0] + j[1, 0] * a[1],
                j[0, 1] * a[0] + j[1, 1] * a[1],
                j[0, 1] * b[0] + j[1, 1] * b[1])

    return MetricField(components, None, kind='pullback', regularity=max(2, g.regularity - 1),
                       pad=g.pad, params={'base': g.kind, 'psi': psi.name})


def _smooth_step(t) -> Tuple[np.ndarray, np.ndarray]:
    """C-infinity step from 0 (t <= 0) to 1 (t >= 1) and its derivative."""
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    ti = np.where(inside, t, 0.5)
    p = np.exp(-1 / ti)
    q = np.exp(-1 / (1 - ti))
    s = np.where(inside, p / (p + q), np.where(t >= 1, 1.0, 0.0))
    dp = p / ti ** 2
    dq = q / (1 - ti) ** 2
    ds = np.where(inside, (dp * q + p * dq) / (p + q) ** 2, 0.0)
    return s, ds


def boundary_normal_gauge(g: MetricField, eps: float = 0.2, min_eps: float = 0.0125,
                          det_floor: float = 0.05) -> DiskDiffeo:
    """Boundary-fixing diffeomorphism after which the radial lines are g-unit normal.

    In polar coordinates the map is
    theta -> theta + m(r) a1(theta), r -> r + m(r) (a2(theta) - 1) with
    m(r) = (r - 1) chi(r) and chi a cutoff equal to 1 near the boundary and 0
    for r < 1 - eps. The coefficients make the pulled back metric satisfy
    g'_theta_r = 0 and g'_rr = 1 on the unit circle.

    Args:
        g: Metric evaluable on the annulus 1 - eps <= r <= 1
        eps: Initial cutoff width
        min_eps: Smallest width tried before giving up
        det_floor: Lower bound for the Jacobian determinant on the annulus

    Returns:
        DiskDiffeo fixing the boundary pointwise

    Raises:
        GaugeNotInjective: If no width down to min_eps keeps the map injective
    """
    sign = 1.0
    width = eps
    while width >= min_eps - 1e-15:
        psi = _gauge_map(g, width, sign)
        theta = 2 * np.pi * np.arange(64) / 64
        th_err, rr_err = _gauge_residual(g, psi, theta)
        if th_err > 1e-6:
            if sign < 0:
                raise GaugeNotInjective(f"Gauge post-condition fails for both signs (residual {th_err:.2e})")
            logger.warning(f"Gauge post-condition failed ({th_err:.2e}), flipping the tangential sign")
            sign = -1.0
            continue
        rr, tt = np.meshgrid(np.linspace(1 - width, 1, 17), theta, indexing='ij')
        min_det = float(np.min(psi.determinant(rr * np.cos(tt), rr * np.sin(tt))))
        if min_det >= det_floor:
            logger.debug(f"Boundary normal gauge built with eps={width:g}, min det {min_det:.3f}, "
                         f"residuals ({th_err:.1e}, {rr_err:.1e})")
            return psi
        logger.info(f"Gauge determinant {min_det:.3e} below floor at eps={width:g}, halving")
        width /= 2
    raise GaugeNotInjective(f"Boundary normal gauge is not injective for eps >= {min_eps}")


def _gauge_coefficients(g: MetricField, sign: float) -> Callable:
    def coeffs(theta):
        g_tt, g_tr, g_rr = polar_components(g, theta, np.ones_like(theta))
        a2 = 1.0 / np.sqrt(g_rr - g_tr * g_tr / g_tt)
        a1 = -sign * a2 * g_tr / g_tt
        return a1, a2

    return coeffs


def _gauge_map(g: MetricField, eps: float, sign: float) -> DiskDiffeo:
    coeffs = _gauge_coefficients(g, sign)
    h = 1e-4

    def parts(x, y):
        r = np.hypot(x, y)
        theta = np.arctan2(y, x)
        chi, dchi = _smooth_step((r - (1 - eps)) / (eps / 2))
        m = (r - 1) * chi
        dm = chi + (r - 1) * dchi / (eps / 2)
        a1, a2 = coeffs(theta)
        return r, theta, m, dm, a1, a2

    def forward(x, y):
        r, theta, m, _, a1, a2 = parts(x, y)
        big_t = theta + m * a1
        big_r = r + m * (a2 - 1)
        return big_r * np.cos(big_t), big_r * np.sin(big_t)

    def jac(x, y):
        r, theta, m, dm, a1, a2 = parts(x, y)
        p1, p2 = coeffs(theta + h)
        q1, q2 = coeffs(theta - h)
        da1, da2 = (p1 - q1) / (2 * h), (p2 - q2) / (2 * h)
        big_t = theta + m * a1
        big_r = r + m * (a2 - 1)
        # d(Theta, R) / d(theta, r)
        d = np.array([[1 + m * da1, dm * a1], [m * da2, 1 + dm * (a2 - 1)]])
        # d(X, Y) / d(Theta, R)
        ct, st = np.cos(big_t), np.sin(big_t)
        p = np.array([[-big_r * st, ct], [big_r * ct, st]])
        # d(theta, r) / d(x, y)
        c, s = np.cos(theta), np.sin(theta)
        safe = np.where(r > 0, r, 1.0)
        q = np.array([[-s / safe, c / safe], [c, s]])
        full = np.einsum('ik...,kl...,lj...->ij...', p, d, q)
        one = np.ones_like(r)
        ident = np.array([[one, 0 * one], [0 * one, one]])
        inner = r < 1 - eps
        return np.where(inner, ident, full)

    return DiskDiffeo(forward, jac, None, boundary_fixing=True, name=f'gauge(eps={eps:g})')


def _gauge_residual(g: MetricField, psi: DiskDiffeo, theta) -> Tuple[float, float]:
    gauged = pullback(psi, g)
    _, g_tr, g_rr = polar_components(gauged, theta, np.ones_like(theta))
    return float(np.max(np.abs(g_tr))), float(np.max(np.abs(g_rr - 1)))


def gauge_residuals(g: MetricField, psi: DiskDiffeo, samples: int = 64) -> Tuple[float, float]:
    """Max |g'_theta_r| and |g'_rr - 1| on the boundary after pulling back by psi."""
    theta = 2 * np.pi * np.arange(samples) / samples
    return _gauge_residual(g, psi, theta)


def diffeo_from_spec(spec: DiffeoSpecModel) -> DiskDiffeo:
    if spec.kind == 'identity':
        return identity_diffeo()
    if spec.kind == 'rotation':
        return rotation(spec.angle)
    return radial_bump(spec.amp, spec.r_in, spec.r_out)


def metric_from_spec(spec: MetricSpecModel) -> MetricField:
    """Build a MetricField from its validated specification."""
    p = spec.params
    pad = float(p.get('pad', DEFAULT_PAD))
    if spec.kind == 'euclidean':
        return euclidean(pad)
    if spec.kind == 'conformal':
        return conformal(float(p.get('c', 0.1)), p.get('profile', 'constant'), pad)
    if spec.kind == 'sheared':
        return sheared(float(p.get('eps', 0.1)), pad)
    base = metric_from_spec(MetricSpecModel.model_validate(p.get('base', {'kind': 'euclidean'})))
    psi_spec = p['psi']
    psi_model = (DiffeoSpecModel.parse_inline(psi_spec) if isinstance(psi_spec, str)
                 else DiffeoSpecModel.model_validate(psi_spec))
    return pullback(diffeo_from_spec(psi_model), base)
