"""Dirichlet problem for the Laplace-Beltrami operator, DN map and harmonic conjugates."""

import logging
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.integrate import cumulative_trapezoid
from scipy.sparse.linalg import LinearOperator, cg

from errors import PathInconsistency, SolverStall
from fiber_ops import fiber_evaluate
from grids import DiskGridFunction, PolarGrid
from metric_core import MetricField, polar_components
from models import SolverStats

logger = logging.getLogger(__name__)

CG_RTOL = 1e-10
MAX_PRINCIPLE_SLACK = 1e-8
LOOP_WARN = 1e-5
LOOP_FAIL = 1e-4

_GAUSS = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


@dataclass(eq=False)
class BoundaryFunction:
    """Real function on the boundary circle sampled at n uniform angles.

    Evaluation off the nodes is trigonometric interpolation, exact on modes
    below n/2.
    """

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def beta(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n) / self.n

    @classmethod
    def from_callable(cls, n: int, f: Callable) -> 'BoundaryFunction':
        beta = 2 * np.pi * np.arange(n) / n
        return cls(np.broadcast_to(f(beta), beta.shape))

    @classmethod
    def mode(cls, n: int, k: int, kind: str = 'cos') -> 'BoundaryFunction':
        """cos(k beta) or sin(k beta)."""
        if kind not in ('cos', 'sin'):
            raise ValueError(f"Unknown mode kind '{kind}'")
        trig = np.cos if kind == 'cos' else np.sin
        return cls.from_callable(n, lambda b: trig(k * b))

    def coefficients(self) -> np.ndarray:
        return np.fft.rfft(self.values)

    def __call__(self, beta) -> np.ndarray:
        return fiber_evaluate(self.coefficients(), np.asarray(beta, dtype=float), self.n)

    def resample(self, n: int) -> 'BoundaryFunction':
        if n == self.n:
            return BoundaryFunction(self.values.copy())
        return BoundaryFunction(self(2 * np.pi * np.arange(n) / n))

    def derivative(self) -> 'BoundaryFunction':
        """d/dbeta by the Fourier multiplier ik (Nyquist mode dropped)."""
        c = self.coefficients()
        k = np.arange(c.size)
        d = 1j * k * c
        if self.n % 2 == 0:
            d[-1] = 0.0
        return BoundaryFunction(np.fft.irfft(d, self.n))

    def inner(self, other: 'BoundaryFunction', weight: Optional[np.ndarray] = None) -> float:
        """Trapezoid inner product in dbeta, optionally times a weight (e.g. g-arc speed)."""
        other = other.resample(self.n)
        w = np.ones(self.n) if weight is None else np.asarray(weight, dtype=float)
        return float(np.sum(self.values * other.values * w) * 2 * np.pi / self.n)

    def norm(self, weight: Optional[np.ndarray] = None) -> float:
        return float(np.sqrt(max(self.inner(self, weight), 0.0)))

    def rows(self) -> Iterator[Tuple[float, float]]:
        for b, v in zip(self.beta, self.values):
            yield float(b), float(v)

    def __add__(self, other):
        rhs = other.resample(self.n).values if isinstance(other, BoundaryFunction) else other
        return BoundaryFunction(self.values + rhs)

    def __sub__(self, other):
        rhs = other.resample(self.n).values if isinstance(other, BoundaryFunction) else other
        return BoundaryFunction(self.values - rhs)

    def __mul__(self, other):
        rhs = other.resample(self.n).values if isinstance(other, BoundaryFunction) else other
        return BoundaryFunction(self.values * rhs)

    __rmul__ = __mul__

    def __neg__(self):
        return BoundaryFunction(-self.values)


@dataclass(eq=False)
class DirichletSolution:
    """Harmonic extension together with its solver statistics."""

    u: DiskGridFunction
    stats: SolverStats
    metric: MetricField


def _conductivity(metric: MetricField, r, theta) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """sqrt(det G) G^-1 in (r, theta) coordinates as (A_rr, A_rt, A_tt)."""
    g_tt, g_tr, g_rr = polar_components(metric, theta, r)
    root = np.sqrt(g_rr * g_tt - g_tr * g_tr)
    return g_tt / root, -g_tr / root, g_rr / root


def _node_index(grid: PolarGrid) -> np.ndarray:
    """Unknown number of every grid node; all r=0 nodes share index 0."""
    idx = np.empty(grid.shape, dtype=np.int64)
    idx[0] = 0
    idx[1:] = 1 + np.arange(grid.nr * grid.ntheta).reshape(grid.nr, grid.ntheta)
    return idx


def stiffness_matrix(metric: MetricField, grid: PolarGrid) -> sparse.csr_matrix:
    """Bilinear finite element stiffness of div(sqrt(det g) g^-1 grad u) on the (r, theta) rectangle.

    Elements are the polar grid cells with 2x2 Gauss quadrature; the pole row
    of nodes is a single unknown.
    """
    nr, nt = grid.nr, grid.ntheta
    dr, dt = grid.dr, grid.dtheta
    idx = _node_index(grid)
    jp = (np.arange(nt) + 1) % nt
    # local node order: (i, j), (i+1, j), (i, j+1), (i+1, j+1)
    nodes = np.stack([idx[:-1, :], idx[1:, :], idx[:-1, jp], idx[1:, jp]], axis=-1)
    r0 = grid.r[:-1, None]
    t0 = grid.theta[None, :]
    local = np.zeros((nr, nt, 4, 4))
    for xi in _GAUSS:
        for eta in _GAUSS:
            a_rr, a_rt, a_tt = _conductivity(metric, r0 + xi * dr + 0 * t0, t0 + eta * dt + 0 * r0)
            dn_r = np.array([-(1 - eta), 1 - eta, -eta, eta]) / dr
            dn_t = np.array([-(1 - xi), -xi, 1 - xi, xi]) / dt
            w = 0.25 * dr * dt
            local += w * (a_rr[..., None, None] * np.multiply.outer(dn_r, dn_r)
                          + a_rt[..., None, None] * (np.multiply.outer(dn_r, dn_t) + np.multiply.outer(dn_t, dn_r))
                          + a_tt[..., None, None] * np.multiply.outer(dn_t, dn_t))
    rows = np.broadcast_to(nodes[..., :, None], local.shape).ravel()
    cols = np.broadcast_to(nodes[..., None, :], local.shape).ravel()
    size = 1 + nr * nt
    return sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(size, size)).tocsr()


def solve_dirichlet(metric: MetricField, f0: BoundaryFunction, grid: PolarGrid,
                    rtol: float = CG_RTOL, maxiter: Optional[int] = None) -> DirichletSolution:
    """Harmonic extension of boundary data f0 for the Laplace-Beltrami operator.

    Args:
        metric: Metric on the disk
        f0: Dirichlet data
        grid: Polar grid carrying the solution
        rtol: Relative residual target of the CG solve
        maxiter: Iteration budget (default 200 sqrt(nr ntheta))

    Returns:
        DirichletSolution with the solution and solver statistics

    Raises:
        SolverStall: If CG does not reach rtol within maxiter iterations
    """
    nr, nt = grid.nr, grid.ntheta
    maxiter = maxiter or int(200 * np.sqrt(nr * nt))
    boundary = f0(grid.theta)
    k = stiffness_matrix(metric, grid)
    n_inner = 1 + (nr - 1) * nt
    k_ii = k[:n_inner, :n_inner]
    k_ib = k[:n_inner, n_inner:]
    rhs = -k_ib @ boundary
    diag = k_ii.diagonal()
    precond = LinearOperator(k_ii.shape, matvec=lambda v: v / diag)

    iterations = [0]

    def count(_):
        iterations[0] += 1

    x0 = np.full(n_inner, boundary.mean())
    sol, info = cg(k_ii, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=precond, callback=count)
    rhs_norm = np.linalg.norm(rhs)
    residual = float(np.linalg.norm(k_ii @ sol - rhs) / rhs_norm) if rhs_norm > 0 else 0.0
    if info > 0:
        raise SolverStall(f"CG did not converge in {maxiter} iterations (residual {residual:.3e})")

    values = np.empty(grid.shape)
    values[0] = sol[0]
    values[1:-1] = sol[1:].reshape(nr - 1, nt)
    values[-1] = boundary
    excursion = float(max(values.max() - boundary.max(), boundary.min() - values.min(), 0.0))
    if excursion > MAX_PRINCIPLE_SLACK:
        logger.warning(f"Discrete maximum principle drift {excursion:.3e}")
    stats = SolverStats(iterations=iterations[0], residual=residual, converged=True,
                        max_principle_excursion=excursion)
    logger.debug(f"Dirichlet solve on {grid.shape}: {stats.iterations} iterations, residual {residual:.2e}")
    return DirichletSolution(DiskGridFunction(grid, values), stats, metric)


def _radial_derivative_at_boundary(u: DiskGridFunction) -> np.ndarray:
    v = u.values
    return (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * u.grid.dr)


def _angular_derivative(values: np.ndarray) -> np.ndarray:
    """d/dtheta along the last axis by FFT."""
    n = values.shape[-1]
    c = np.fft.rfft(values, axis=-1)
    k = np.arange(c.shape[-1])
    d = 1j * k * c
    if n % 2 == 0:
        d[..., -1] = 0.0
    return np.fft.irfft(d, n, axis=-1)


def normal_derivative(solution: DirichletSolution) -> BoundaryFunction:
    """Inward g-unit normal derivative of the solution on the outer ring."""
    u, metric = solution.u, solution.metric
    grid = u.grid
    theta = grid.theta
    g_tt, g_tr, g_rr = polar_components(metric, theta, grid.radius)
    det = g_rr * g_tt - g_tr * g_tr
    inv_rr, inv_rt = g_tt / det, -g_tr / det
    du_r = _radial_derivative_at_boundary(u)
    du_t = _angular_derivative(u.boundary_values())
    return BoundaryFunction(-(inv_rr * du_r + inv_rt * du_t) / np.sqrt(inv_rr))


def dn_map(metric: MetricField, f0: BoundaryFunction, grid: PolarGrid) -> BoundaryFunction:
    """Lambda f0: inward normal derivative of the harmonic extension of f0, on the grid angles."""
    return normal_derivative(solve_dirichlet(metric, f0, grid))


def boundary_arc_speed(metric: MetricField, theta, radius: float = 1.0) -> np.ndarray:
    """|d/dtheta|_g on the boundary circle, the density of dS_g in theta."""
    g_tt, _, _ = polar_components(metric, theta, radius)
    return np.sqrt(g_tt)


def dn_matrix(metric: MetricField, modes: int, grid: PolarGrid) -> np.ndarray:
    """DN map in the real Fourier basis 1, cos t, sin t, ..., cos Kt, sin Kt.

    Column j holds the coefficients of Lambda applied to basis function j.
    """
    basis = [BoundaryFunction.mode(grid.ntheta, 0)]
    for k in range(1, modes + 1):
        basis.append(BoundaryFunction.mode(grid.ntheta, k, 'cos'))
        basis.append(BoundaryFunction.mode(grid.ntheta, k, 'sin'))
    out = np.zeros((len(basis), len(basis)))
    for j, b in enumerate(basis):
        image = dn_map(metric, b, grid)
        for i, e in enumerate(basis):
            out[i, j] = image.inner(e) / e.inner(e)
    return out


def harmonic_conjugate(metric: MetricField, u: DiskGridFunction,
                       tol: float = LOOP_FAIL) -> DiskGridFunction:
    """Conjugate u* with du*(v) = du(v_perp) and u*(0) = 0.

    The rotated flux q = sqrt(det G) G^-1 grad u gives d_r u* = -q^theta and
    d_theta u* = q^r in polar coordinates. u* is integrated along rays from
    the origin; the ring integrals of d_theta u* measure path dependence.

    Raises:
        PathInconsistency: If a relative ring integral exceeds tol
    """
    grid = u.grid
    rr, tt = grid.mesh()
    vals = u.values
    du_r = np.gradient(vals, grid.dr, axis=0, edge_order=2)
    du_t = _angular_derivative(vals)

    # gradient at the origin from the first ring
    r1 = grid.r[1]
    theta = grid.theta
    gx = 2.0 / (grid.ntheta * r1) * np.sum(vals[1] * np.cos(theta))
    gy = 2.0 / (grid.ntheta * r1) * np.sum(vals[1] * np.sin(theta))
    du_r[0] = gx * np.cos(theta) + gy * np.sin(theta)

    a_rr, a_rt, a_tt = _conductivity(metric, rr[1:], tt[1:])
    q_r = a_rr * du_r[1:] + a_rt * du_t[1:]
    q_t = a_rt * du_r[1:] + a_tt * du_t[1:]

    h11, h12, h22 = metric.inverse(0.0, 0.0)
    root = metric.volume_density(0.0, 0.0)
    qx = root * (h11 * gx + h12 * gy)
    qy = root * (h12 * gx + h22 * gy)
    center = -np.cos(theta) * qy + np.sin(theta) * qx

    dstar_r = np.vstack([center[None, :], -q_t])
    values = cumulative_trapezoid(dstar_r, grid.r, axis=0, initial=0.0)

    flux = np.abs(q_r.sum(axis=1)) * grid.dtheta
    scale = float(np.max(np.abs(q_r).sum(axis=1))) * grid.dtheta
    loop = float(np.max(flux) / scale) if scale > 1e-12 else 0.0
    if loop > tol:
        raise PathInconsistency(f"Ring integral residual {loop:.3e} exceeds {tol:.1e}")
    if loop > LOOP_WARN:
        logger.warning(f"Harmonic conjugate ring residual {loop:.3e}")
    logger.debug(f"Harmonic conjugate built, ring residual {loop:.2e}")
    return DiskGridFunction(grid, values)


def cauchy_riemann_residual(metric: MetricField, u: DiskGridFunction, u_star: DiskGridFunction,
                            r_max: float = 0.95) -> float:
    """||du* - du(perp)|| / ||du|| on r < r_max, measured in the metric."""
    grid = u.grid
    rr, tt = grid.mesh()
    mask = (rr > 0) & (rr < r_max)
    a_rr, a_rt, a_tt = _conductivity(metric, rr[mask], tt[mask])

    def polar_grad(f):
        return (np.gradient(f.values, grid.dr, axis=0, edge_order=2)[mask],
                _angular_derivative(f.values)[mask])

    ur, ut = polar_grad(u)
    sr, st = polar_grad(u_star)
    q_r = a_rr * ur + a_rt * ut
    q_t = a_rt * ur + a_tt * ut
    err = np.hypot(sr + q_t, st - q_r)
    ref = np.hypot(q_t, q_r)
    return float(np.sqrt(np.sum(err ** 2) / max(np.sum(ref ** 2), 1e-300)))
