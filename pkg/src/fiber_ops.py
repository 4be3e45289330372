"""Functions on the unit sphere bundle with fiberwise Fourier structure."""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np

from errors import BoundaryStencil
from grids import DiskGridFunction, PolarGrid
from metric_core import MetricField

logger = logging.getLogger(__name__)

FLOW_STEP = 1e-4
GRADIENT_STEP = 1e-6
PV_NODES = 4096

SMCallable = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def fiber_frame(metric: MetricField, x, y) -> Tuple[Tuple, Tuple]:
    """Positively oriented g-orthonormal frame from Gram-Schmidt of (d/dx, d/dy)."""
    g11, g12, g22 = metric.evaluate(x, y)
    s11 = np.sqrt(g11)
    e1 = (1.0 / s11, np.zeros_like(s11))
    # d/dy minus its projection on e1
    proj = g12 / s11
    ux, uy = -proj / s11, np.ones_like(s11)
    nu = np.sqrt(g22 - proj * proj)
    return e1, (ux / nu, uy / nu)


def fiber_directions(metric: MetricField, x, y, nphi: int) -> Tuple[np.ndarray, np.ndarray]:
    """Directions v_k = cos(phi_k) e1 + sin(phi_k) e2, phi_k = 2 pi k / nphi.

    Returns:
        Arrays (vx, vy) of shape x.shape + (nphi,)
    """
    e1, e2 = fiber_frame(metric, x, y)
    phi = 2 * np.pi * np.arange(nphi) / nphi
    c, s = np.cos(phi), np.sin(phi)
    vx = np.asarray(e1[0])[..., None] * c + np.asarray(e2[0])[..., None] * s
    vy = np.asarray(e1[1])[..., None] * c + np.asarray(e2[1])[..., None] * s
    return vx, vy


def fiber_angle(metric: MetricField, x, y, vx, vy) -> np.ndarray:
    """Angle of v in the fiber frame at x."""
    e1, e2 = fiber_frame(metric, x, y)
    return np.arctan2(metric.inner(x, y, (vx, vy), e2), metric.inner(x, y, (vx, vy), e1))


def rotate_ccw(metric: MetricField, x, y, vx, vy) -> Tuple[np.ndarray, np.ndarray]:
    """Counterclockwise g-rotation by 90 degrees: sqrt(det g) g^-1 (-v2, v1)."""
    h11, h12, h22 = metric.inverse(x, y)
    root = metric.volume_density(x, y)
    return root * (-h11 * vy + h12 * vx), root * (-h12 * vy + h22 * vx)


def perp_vector(metric: MetricField, x, y, vx, vy) -> Tuple[np.ndarray, np.ndarray]:
    """Clockwise g-rotation v_perp; (a, b) -> (b, -a) for the flat metric."""
    rx, ry = rotate_ccw(metric, x, y, vx, vy)
    return -rx, -ry


def differential(f: Callable, x, y) -> Tuple[np.ndarray, np.ndarray]:
    """Cartesian differential (df/dx, df/dy) of a scalar on the disk."""
    if isinstance(f, DiskGridFunction):
        return f.gradient(x, y)
    h = GRADIENT_STEP
    return (f(x + h, y) - f(x - h, y)) / (2 * h), (f(x, y + h) - f(x, y - h)) / (2 * h)


def gradient_vector(metric: MetricField, f: Callable, x, y) -> Tuple[np.ndarray, np.ndarray]:
    """Riemannian gradient g^-1 df."""
    fx, fy = differential(f, x, y)
    h11, h12, h22 = metric.inverse(x, y)
    return h11 * fx + h12 * fy, h12 * fx + h22 * fy


def directional_derivative(f: Callable) -> SMCallable:
    """Integrand (x, v) -> df(v) on SM."""
    def integrand(x, y, vx, vy):
        fx, fy = differential(f, x, y)
        return fx * vx + fy * vy
    return integrand


def perp_derivative(metric: MetricField, f: Callable) -> SMCallable:
    """Integrand (x, v) -> df(v_perp) on SM."""
    def integrand(x, y, vx, vy):
        fx, fy = differential(f, x, y)
        px, py = perp_vector(metric, x, y, vx, vy)
        return fx * px + fy * py
    return integrand


def hilbert_pv_oracle(u: Callable[[np.ndarray], np.ndarray], theta, nodes: int = PV_NODES) -> np.ndarray:
    """Principal value (1/2pi) PV int u(theta+s) (1 + cos s) / (-sin s) ds.

    The kernel is (1 + <xi, eta>) / <xi_perp, eta> with eta at angle theta+s
    and xi_perp the clockwise rotation of xi. Midpoint nodes exclude s = 0
    symmetrically.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    s = (np.arange(nodes) + 0.5) * 2 * np.pi / nodes
    kernel = (1 + np.cos(s)) / (-np.sin(s))
    vals = u(theta[:, None] + s[None, :])
    return (vals * kernel).sum(axis=1) / nodes


def _raw_multiplier(nphi: int) -> np.ndarray:
    k = np.fft.rfftfreq(nphi, d=1.0 / nphi)
    m = -1j * np.sign(k)
    if nphi % 2 == 0:
        m[-1] = 0.0
    return m


@lru_cache(maxsize=None)
def hilbert_sign() -> float:
    """Sign of the Fourier multiplier, fixed once against the PV kernel."""
    nphi = 16
    theta = 2 * np.pi * np.arange(nphi) / nphi
    coeffs = np.fft.rfft(np.cos(theta)) * _raw_multiplier(nphi)
    spectral = np.fft.irfft(coeffs, nphi)
    oracle = hilbert_pv_oracle(np.cos, theta)
    sign = 1.0 if np.dot(spectral, oracle) >= 0 else -1.0
    logger.debug(f"Hilbert multiplier sign calibrated to {sign:+.0f}")
    return sign


def hilbert_multiplier(nphi: int) -> np.ndarray:
    """Multiplier of H on rfft coefficients: -i sgn(k) up to the calibrated sign."""
    return hilbert_sign() * _raw_multiplier(nphi)


def fiber_hilbert(values: np.ndarray, parity: Optional[str] = None) -> np.ndarray:
    """Apply H (or H+ / H- for parity 'even' / 'odd') along the last axis."""
    nphi = values.shape[-1]
    if parity is not None:
        values = fiber_part(values, parity)
    coeffs = np.fft.rfft(values, axis=-1) * hilbert_multiplier(nphi)
    return np.fft.irfft(coeffs, nphi, axis=-1)


def fiber_part(values: np.ndarray, parity: str) -> np.ndarray:
    """Even or odd part in the fiber: (u(v) +- u(-v)) / 2."""
    nphi = values.shape[-1]
    if nphi % 2:
        raise ValueError("Fiber parity needs an even number of fiber nodes")
    flipped = np.roll(values, -nphi // 2, axis=-1)
    if parity == 'even':
        return 0.5 * (values + flipped)
    if parity == 'odd':
        return 0.5 * (values - flipped)
    raise ValueError(f"Unknown parity '{parity}'")


def fiber_evaluate(coeffs: np.ndarray, phi, nphi: int) -> np.ndarray:
    """Evaluate rfft coefficients (..., nphi//2+1) at fiber angles phi (...,)."""
    k = np.arange(coeffs.shape[-1])
    w = np.full(k.size, 2.0)
    w[0] = 1.0
    if nphi % 2 == 0:
        w[-1] = 1.0
    phase = np.exp(1j * np.asarray(phi)[..., None] * k)
    return np.real(np.sum(coeffs * w * phase, axis=-1)) / nphi


@dataclass(eq=False)
class SMGridFunction:
    """Function on SM sampled on a polar grid times nphi fiber angles.

    values[i, j, k] is u(x_ij, v_k) with v_k at angle 2 pi k / nphi in the
    positively oriented g-orthonormal frame at x_ij.
    """

    metric: MetricField
    grid: PolarGrid
    values: np.ndarray
    clipped: int = 0
    one_sided: int = 0
    _mode_splines: Optional[list] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[:2] != self.grid.shape:
            raise ValueError(f"Expected leading shape {self.grid.shape}, got {self.values.shape[:2]}")

    @property
    def nphi(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def from_callable(cls, metric: MetricField, grid: PolarGrid, nphi: int, u: SMCallable) -> 'SMGridFunction':
        """Sample u(x, y, vx, vy) at every node and fiber direction."""
        x, y = grid.cartesian()
        vx, vy = fiber_directions(metric, x, y, nphi)
        vals = u(x[..., None], y[..., None], vx, vy)
        return cls(metric, grid, np.broadcast_to(vals, grid.shape + (nphi,)))

    @classmethod
    def lift(cls, metric: MetricField, grid: PolarGrid, nphi: int, f: Callable) -> 'SMGridFunction':
        """Lift a function on the disk to SM (constant along fibers)."""
        return cls.from_callable(metric, grid, nphi, lambda x, y, vx, vy: f(x, y) + 0 * vx)

    def fourier(self) -> np.ndarray:
        """Fiber Fourier coefficients (rfft convention), shape (nr+1, ntheta, nphi//2+1)."""
        return np.fft.rfft(self.values, axis=-1)

    @classmethod
    def from_fourier(cls, metric, grid, coeffs, nphi) -> 'SMGridFunction':
        return cls(metric, grid, np.fft.irfft(coeffs, nphi, axis=-1))

    def _with(self, values) -> 'SMGridFunction':
        return SMGridFunction(self.metric, self.grid, values, self.clipped)

    def hilbert(self) -> 'SMGridFunction':
        return self._with(fiber_hilbert(self.values))

    def hilbert_even(self) -> 'SMGridFunction':
        return self._with(fiber_hilbert(self.values, 'even'))

    def hilbert_odd(self) -> 'SMGridFunction':
        return self._with(fiber_hilbert(self.values, 'odd'))

    def even(self) -> 'SMGridFunction':
        return self._with(fiber_part(self.values, 'even'))

    def odd(self) -> 'SMGridFunction':
        return self._with(fiber_part(self.values, 'odd'))

    def fiber_integral(self) -> DiskGridFunction:
        """Trapezoid integral over each fiber circle."""
        return DiskGridFunction(self.grid, self.values.sum(axis=-1) * (2 * np.pi / self.nphi))

    def geodesic_derivative(self, flow) -> 'SMGridFunction':
        """X u on the grid."""
        return grid_flow_derivative(self, flow)

    def perp_geodesic_derivative(self, flow) -> 'SMGridFunction':
        """X_perp u on the grid."""
        return grid_flow_derivative(self, flow, perp=True)

    def __call__(self, x, y, vx, vy) -> np.ndarray:
        """Evaluate at arbitrary phase points (spatial splines per fiber mode)."""
        if self._mode_splines is None:
            coeffs = self.fourier()
            self._mode_splines = [(DiskGridFunction(self.grid, coeffs[..., k].real),
                                   DiskGridFunction(self.grid, coeffs[..., k].imag))
                                  for k in range(coeffs.shape[-1])]
        x, y, vx, vy = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, vx, vy)))
        phi = fiber_angle(self.metric, x, y, vx, vy)
        coeffs = np.stack([re(x, y) + 1j * im(x, y) for re, im in self._mode_splines], axis=-1)
        return fiber_evaluate(coeffs, phi, self.nphi)

    def __add__(self, other):
        return self._with(self.values + (other.values if isinstance(other, SMGridFunction) else other))

    def __sub__(self, other):
        return self._with(self.values - (other.values if isinstance(other, SMGridFunction) else other))

    def __mul__(self, other):
        return self._with(self.values * (other.values if isinstance(other, SMGridFunction) else other))

    __rmul__ = __mul__


def _stencil(flow, x, y, vx, vy, t: float, perp: bool) -> Tuple[Tuple, Tuple]:
    """End points of the flow stencil at times t and -t.

    For X_perp the stencil follows psi_t: the geodesic from (x, v_perp),
    carrying its velocity rotated back by +90 degrees.
    """
    if not perp:
        return flow.flow_for(x, y, vx, vy, t), flow.flow_for(x, y, vx, vy, -t)
    metric = flow.metric
    px, py = perp_vector(metric, x, y, vx, vy)
    ends = []
    for s in (t, -t):
        gx, gy, gvx, gvy = flow.flow_for(x, y, px, py, s)
        wx, wy = rotate_ccw(metric, gx, gy, gvx, gvy)
        ends.append((gx, gy, wx, wy))
    return ends[0], ends[1]


def _outside(point, radius: float) -> np.ndarray:
    return np.hypot(point[0], point[1]) > radius + 1e-12


def geodesic_derivative(flow, u: SMCallable, x, y, vx, vy, t: float = FLOW_STEP,
                        radius: Optional[float] = None) -> np.ndarray:
    """X u by the centered flow difference (u(phi_t) - u(phi_-t)) / 2t.

    Raises:
        BoundaryStencil: If the stencil leaves the disk
    """
    fwd, bwd = _stencil(flow, x, y, vx, vy, t, perp=False)
    _check_stencil(flow, fwd, bwd, radius)
    return (u(*fwd) - u(*bwd)) / (2 * t)


def perp_geodesic_derivative(flow, u: SMCallable, x, y, vx, vy, t: float = FLOW_STEP,
                             radius: Optional[float] = None) -> np.ndarray:
    """X_perp u along psi_t: the geodesic from (x, v_perp) carrying the rotated velocity.

    Raises:
        BoundaryStencil: If the stencil leaves the disk
    """
    fwd, bwd = _stencil(flow, x, y, vx, vy, t, perp=True)
    _check_stencil(flow, fwd, bwd, radius)
    return (u(*fwd) - u(*bwd)) / (2 * t)


def _check_stencil(flow, fwd, bwd, radius):
    r = flow.radius if radius is None else radius
    if np.any(_outside(fwd, r)) or np.any(_outside(bwd, r)):
        raise BoundaryStencil("Flow difference stencil leaves the disk")


def grid_flow_derivative(u: 'SMGridFunction', flow, perp: bool = False,
                         t: float = FLOW_STEP) -> 'SMGridFunction':
    """X u (or X_perp u) at every node and fiber direction of u.

    Centered differences where the stencil stays in the disk of u's grid,
    one-sided differences where one end leaves it. Nodes where both ends
    leave are set to 0; every non-centered node is counted in
    ``one_sided`` and reported as a BoundaryStencil warning.
    """
    x, y = u.grid.cartesian()
    vx, vy = fiber_directions(u.metric, x, y, u.nphi)
    xs, ys = np.broadcast_to(x[..., None], vx.shape), np.broadcast_to(y[..., None], vx.shape)
    fwd, bwd = _stencil(flow, xs, ys, vx, vy, t, perp)
    out_f = _outside(fwd, u.grid.radius)
    out_b = _outside(bwd, u.grid.radius)
    # ends outside the grid disk are discarded below
    f_val = np.where(out_f, 0.0, u(*fwd))
    b_val = np.where(out_b, 0.0, u(*bwd))
    centre = u.values
    values = np.where(~out_f & ~out_b, (f_val - b_val) / (2 * t),
                      np.where(out_f & ~out_b, (centre - b_val) / t,
                               np.where(~out_f & out_b, (f_val - centre) / t, 0.0)))
    one_sided = int(np.count_nonzero(out_f | out_b))
    if one_sided:
        logger.warning(f"{BoundaryStencil.__name__}: {one_sided} stencil(s) near the boundary "
                       f"fell back to one-sided differences")
    result = SMGridFunction(u.metric, u.grid, values, u.clipped)
    result.one_sided = one_sided
    return result


def gradients(metric: MetricField, f: Callable, grid: PolarGrid, nphi: int) -> Tuple[SMGridFunction, SMGridFunction]:
    """Degree-one SM functions (x, v) -> df(v) and (x, v) -> df(v_perp)."""
    along = SMGridFunction.from_callable(metric, grid, nphi, directional_derivative(f))
    across = SMGridFunction.from_callable(metric, grid, nphi, perp_derivative(metric, f))
    return along, across
