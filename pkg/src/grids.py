"""Polar tensor grids and sampled scalar functions on the disk."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Tuple

import numpy as np
from scipy.interpolate import RectBivariateSpline

logger = logging.getLogger(__name__)

# Radial padding nodes mirrored through the pole so the spline is smooth at r=0.
POLE_PAD = 3
GRADIENT_STEP = 1e-6


@dataclass(frozen=True)
class PolarGrid:
    """Polar tensor grid r_i = R*i/nr, theta_j = 2*pi*j/ntheta on the disk of radius R."""

    nr: int
    ntheta: int
    radius: float = 1.0

    def __post_init__(self):
        if self.ntheta % 2:
            raise ValueError(f"ntheta must be even, got {self.ntheta}")
        if self.nr < 2:
            raise ValueError(f"nr must be at least 2, got {self.nr}")

    @property
    def r(self) -> np.ndarray:
        return self.radius * np.arange(self.nr + 1) / self.nr

    @property
    def theta(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.ntheta) / self.ntheta

    @property
    def dr(self) -> float:
        return self.radius / self.nr

    @property
    def dtheta(self) -> float:
        return 2.0 * np.pi / self.ntheta

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nr + 1, self.ntheta)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return (R, Theta) arrays of shape (nr+1, ntheta)."""
        return np.meshgrid(self.r, self.theta, indexing='ij')

    def cartesian(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return (X, Y) node coordinates of shape (nr+1, ntheta)."""
        rr, tt = self.mesh()
        return rr * np.cos(tt), rr * np.sin(tt)

    def radial_weights(self) -> np.ndarray:
        """Trapezoid weights in r including the Jacobian factor r."""
        w = np.full(self.nr + 1, self.dr)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w * self.r

    def quadrature_weights(self, metric=None) -> np.ndarray:
        """Weights of the area (or Riemannian volume) quadrature at every node.

        Args:
            metric: Optional MetricField; when given the weights carry sqrt(det g)

        Returns:
            Array of shape (nr+1, ntheta)
        """
        w = np.outer(self.radial_weights(), np.full(self.ntheta, self.dtheta))
        if metric is not None:
            x, y = self.cartesian()
            w = w * metric.volume_density(x, y)
        return w

    def refined(self, factor: int = 2) -> 'PolarGrid':
        return PolarGrid(self.nr * factor, self.ntheta * factor, self.radius)


@dataclass(eq=False)
class DiskGridFunction:
    """Scalar sampled on a PolarGrid with bicubic interpolation.

    Node values at r=0 are averaged so the pole carries a single value. The
    interpolant is a cubic spline in signed radius (values for r<0 are read
    through the pole) and periodic angle.
    """

    grid: PolarGrid
    values: np.ndarray
    _spline: Optional[RectBivariateSpline] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(f"Expected values of shape {self.grid.shape}, got {values.shape}")
        values = values.copy()
        values[0, :] = values[0, :].mean()
        self.values = values

    @classmethod
    def from_callable(cls, grid: PolarGrid, f: Callable) -> 'DiskGridFunction':
        """Sample a vectorized callable f(x, y) at the grid nodes."""
        x, y = grid.cartesian()
        return cls(grid, np.broadcast_to(f(x, y), grid.shape))

    @classmethod
    def zeros(cls, grid: PolarGrid) -> 'DiskGridFunction':
        return cls(grid, np.zeros(grid.shape))

    @property
    def spline(self) -> RectBivariateSpline:
        if self._spline is None:
            self._spline = self._build_spline()
        return self._spline

    def _build_spline(self) -> RectBivariateSpline:
        g = self.grid
        half = g.ntheta // 2
        mirrored = np.roll(self.values[1:POLE_PAD + 1], -half, axis=1)[::-1]
        r_axis = np.concatenate([-g.r[1:POLE_PAD + 1][::-1], g.r])
        block = np.concatenate([mirrored, self.values], axis=0)
        t_axis = np.concatenate([g.theta[-POLE_PAD:] - 2 * np.pi, g.theta,
                                 g.theta[:POLE_PAD + 1] + 2 * np.pi])
        block = np.concatenate([block[:, -POLE_PAD:], block, block[:, :POLE_PAD + 1]], axis=1)
        return RectBivariateSpline(r_axis, t_axis, block, kx=3, ky=3, s=0)

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = np.minimum(np.hypot(x, y), self.grid.radius)
        t = np.mod(np.arctan2(y, x), 2 * np.pi)
        out = self.spline.ev(r.ravel(), t.ravel())
        return out.reshape(np.broadcast(x, y).shape)

    def gradient(self, x, y) -> Tuple[np.ndarray, np.ndarray]:
        """Cartesian gradient of the interpolant.

        Spline derivatives in (r, theta) are used away from the pole, central
        differences within one radial step of it.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        x, y = np.broadcast_to(x, shape).ravel(), np.broadcast_to(y, shape).ravel()
        r = np.hypot(x, y)
        t = np.mod(np.arctan2(y, x), 2 * np.pi)
        rc = np.minimum(r, self.grid.radius)
        safe = np.maximum(rc, self.grid.dr)
        f_r = self.spline.ev(rc, t, dx=1)
        f_t = self.spline.ev(rc, t, dy=1)
        c, s = np.cos(t), np.sin(t)
        fx = c * f_r - s * f_t / safe
        fy = s * f_r + c * f_t / safe
        near = r < self.grid.dr
        if near.any():
            h = GRADIENT_STEP
            xn, yn = x[near], y[near]
            fx[near] = (self(xn + h, yn) - self(xn - h, yn)) / (2 * h)
            fy[near] = (self(xn, yn + h) - self(xn, yn - h)) / (2 * h)
        return fx.reshape(shape), fy.reshape(shape)

    def boundary_values(self) -> np.ndarray:
        """Values on the outer ring, indexed like grid.theta."""
        return self.values[-1].copy()

    def integrate(self, metric=None, r_max: Optional[float] = None) -> float:
        """Integral over the disk against dVol_g (or area when metric is None)."""
        w = self.grid.quadrature_weights(metric)
        if r_max is not None:
            w = w * (self.grid.r <= r_max + 1e-12)[:, None]
        return float(np.sum(w * self.values))

    def inner(self, other: 'DiskGridFunction', metric=None, r_max: Optional[float] = None) -> float:
        self._check_grid(other)
        return (self * other).integrate(metric, r_max)

    def l2_norm(self, metric=None, r_max: Optional[float] = None) -> float:
        return float(np.sqrt(max(self.inner(self, metric, r_max), 0.0)))

    def rows(self) -> Iterator[Tuple[float, float, float]]:
        """Yield (r, theta, value) rows for CSV export."""
        for i, r in enumerate(self.grid.r):
            for j, t in enumerate(self.grid.theta):
                yield float(r), float(t), float(self.values[i, j])

    def _check_grid(self, other: 'DiskGridFunction'):
        if other.grid != self.grid:
            raise ValueError(f"Grid mismatch: {self.grid} vs {other.grid}")

    def _binary(self, other, op) -> 'DiskGridFunction':
        if isinstance(other, DiskGridFunction):
            self._check_grid(other)
            return DiskGridFunction(self.grid, op(self.values, other.values))
        return DiskGridFunction(self.grid, op(self.values, other))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __radd__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    def __rmul__(self, other):
        return self._binary(other, np.multiply)

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __neg__(self):
        return DiskGridFunction(self.grid, -self.values)
