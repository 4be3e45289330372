"""Experiment execution, artifact writing and run notifications."""

import csv
import logging
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from boundary_geom import boundary_distances, recover_boundary_metric, boundary_distance, scatter, wrap_angle
from geodesic_flow import GeodesicFlow, certify_simple
from grids import DiskGridFunction
from identity_lab import (SurjectivitySolver, check_conjugates, check_hilbert_identity,
                          check_transport_identity, compact_bump, euclidean_convolution_oracle,
                          filtered_backprojection, gaussian_bump, make_fan, polar_grid, riesz_calibration,
                          santalo_volume_check, tapered_boundary_data, boundary_determination_experiment,
                          dn_equality_experiment)
from laplace_dn import BoundaryFunction, boundary_arc_speed, dn_map, dn_matrix
from metric_core import MetricField, diffeo_from_spec, metric_from_spec, pullback
from models import (CriterionResult, DiffeoSpecModel, ExperimentConfigModel, IdentityReport,
                    MeasurementReport, RunManifest)
from notifier import Notifier
from xray import FiberTraces, adjointness_gap, normal_operator, xray_transform

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = "0.1.0"
EXPERIMENTS = ('certify', 'distance', 'scatter', 'xray', 'normal', 'dn', 'identity', 'surjectivity',
               'fbp', 'thm1', 'thm3', 'volume')
DISTANCE_PAIRS = 20
SYMMETRY_PAIRS = 5
SYMMETRY_TOL = 1e-3
CONVOLUTION_SUPPORT = 0.9
FBP_SIGMA = 0.2
FBP_RADIUS = 0.7


@dataclass
class ExperimentOutcome:
    """Report, verdicts and tabular artifacts of one experiment."""

    report: BaseModel
    criteria: List[CriterionResult]
    tables: Dict[str, Tuple[List[str], List[Sequence[float]]]] = field(default_factory=dict)
    plots: Dict[str, Tuple[str, Sequence[float], Sequence[float]]] = field(default_factory=dict)


def criterion(name: str, value: float, threshold: float, passed: Optional[bool] = None) -> CriterionResult:
    """Build a criterion; passes when value < threshold unless ``passed`` is given."""
    value = float(value)
    ok = bool(value < threshold) if passed is None else bool(passed)
    return CriterionResult(name=name, value=value, threshold=float(threshold), passed=ok)


def write_csv(path: str, header: List[str], rows: Iterable[Sequence[float]]):
    """Write rows with a fixed float format so repeated runs are byte-identical."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{float(v):.17g}" for v in row])


def svg_line_plot(title: str, xs: Sequence[float], ys: Sequence[float], log_y: bool = True,
                  width: int = 480, height: int = 320) -> str:
    """Minimal SVG polyline plot (log10 y axis by default)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if log_y:
        ys = np.log10(np.maximum(np.abs(ys), 1e-300))
    margin = 40
    span_x = max(float(np.ptp(xs)), 1e-12)
    span_y = max(float(np.ptp(ys)), 1e-12)
    px = margin + (xs - xs.min()) / span_x * (width - 2 * margin)
    py = height - margin - (ys - ys.min()) / span_y * (height - 2 * margin)
    points = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
    label = f"log10 range [{ys.min():.2f}, {ys.max():.2f}]" if log_y else f"range [{ys.min():.3g}, {ys.max():.3g}]"
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
            f'  <text x="{margin}" y="20" font-size="14">{title}</text>\n'
            f'  <text x="{margin}" y="{height - 10}" font-size="10">{label}</text>\n'
            f'  <rect x="{margin}" y="{margin}" width="{width - 2 * margin}" height="{height - 2 * margin}" '
            f'fill="none" stroke="#888"/>\n'
            f'  <polyline points="{points}" fill="none" stroke="#1f4e9c" stroke-width="2"/>\n'
            f'</svg>\n')


def identity_criteria(report: IdentityReport, tol: float, refine: int, ratio: float) -> List[CriterionResult]:
    out = [criterion(f"{report.name}-residual", report.residual, tol)]
    if refine > 0:
        ratios = [row.ratio for row in report.refinement if row.ratio is not None]
        worst = min(ratios) if ratios else float('inf')
        out.append(criterion(f"{report.name}-refinement", worst, ratio,
                             passed='refinement-not-monotone' not in report.flags))
    return out


def refinement_table(report: IdentityReport) -> Tuple[List[str], List[Sequence[float]]]:
    rows = [(r.level, r.nr, r.nbeta, r.nalpha, r.nphi, r.residual, r.ratio if r.ratio is not None else np.nan)
            for r in report.refinement]
    return ['level', 'nr', 'nbeta', 'nalpha', 'nphi', 'residual', 'ratio'], rows


class ExperimentRunner:
    """Run one configured experiment with timing, failure capture and notifications."""

    def __init__(self, config: ExperimentConfigModel, notifier: Optional[Notifier] = None):
        """Initialize experiment runner.

        Args:
            config: Validated experiment configuration
            notifier: Notifier to use; one is built from ``config.apprise`` otherwise
        """
        self.config = config
        self.name = config.name if config.variant is None else f"{config.name}-{config.variant}"
        self.grid = config.grid
        self.tol = config.tolerances
        self.out_dir = config.out_dir
        self.notify_on = config.notification.notify_on
        self.include_output = config.notification.include_output
        self.notifier = notifier or Notifier(config.apprise)
        self.metric: Optional[MetricField] = None

    def validate(self):
        """Check the configuration and build the metric.

        Raises:
            ValueError: If the experiment cannot run with this configuration
        """
        if self.config.name not in EXPERIMENTS:
            raise ValueError(f"Unknown experiment '{self.config.name}'")
        if self.config.name == 'identity' and self.config.variant is None:
            raise ValueError("The identity experiment needs a variant: transport, hilbert or conjugate")
        self.metric = metric_from_spec(self.config.metric)
        if self.config.name == 'fbp' and self.metric.kind != 'euclidean':
            raise ValueError("Filtered backprojection is only defined for the euclidean metric")

    def run(self) -> RunManifest:
        """Execute the experiment, write its artifacts and notify.

        Exceptions are logged and turned into a failed manifest.
        """
        logger.info(f"Starting experiment: {self.name}")
        start_time = time.time()
        os.makedirs(self.out_dir, exist_ok=True)
        outputs: List[str] = []
        criteria: List[CriterionResult] = []
        error = None

        try:
            if self.metric is None:
                self.validate()
            outcome = self._experiments()[self.config.name]()
            criteria = outcome.criteria
            outputs = self._write(outcome)
        except Exception as e:
            error = f"{type(e).__name__}: {e}"
            logger.error(f"Experiment '{self.name}' encountered error: {error}")

        manifest = RunManifest(
            config=self.config,
            version=ARTIFACT_VERSION,
            timestamp=datetime.now(timezone.utc).isoformat(),
            seed=self.config.seed,
            outputs=outputs + ['manifest.json'],
            criteria=criteria,
            error=error,
        )
        with open(os.path.join(self.out_dir, 'manifest.json'), 'w') as f:
            f.write(manifest.model_dump_json(indent=2))

        duration = time.time() - start_time
        if manifest.passed:
            logger.info(f"Experiment '{self.name}' passed in {duration:.2f}s")
        else:
            logger.error(f"Experiment '{self.name}' failed after {duration:.2f}s")
        self._send_notification(manifest, duration)
        return manifest

    def _write(self, outcome: ExperimentOutcome) -> List[str]:
        written = ['report.json']
        with open(os.path.join(self.out_dir, 'report.json'), 'w') as f:
            f.write(outcome.report.model_dump_json(indent=2))
        for name, (header, rows) in outcome.tables.items():
            write_csv(os.path.join(self.out_dir, f"{name}.csv"), header, rows)
            written.append(f"{name}.csv")
        if self.config.plots:
            for name, (title, xs, ys) in outcome.plots.items():
                with open(os.path.join(self.out_dir, f"{name}.svg"), 'w') as f:
                    f.write(svg_line_plot(title, xs, ys))
                written.append(f"{name}.svg")
        logger.info(f"Wrote {len(written)} artifact(s) to {self.out_dir}")
        return written

    def _send_notification(self, manifest: RunManifest, duration: float):
        """Send a notification according to notify_on / include_output."""
        success = manifest.passed
        if self.notify_on == 'never':
            return
        if self.notify_on == 'failure' and success:
            return

        should_include_output = self.include_output == 'all' or (self.include_output == 'failure' and not success)
        if success:
            self.notifier.send_run_success(self.name, duration, manifest.criteria, should_include_output)
        else:
            self.notifier.send_run_failure(self.name, manifest.criteria, manifest.error, duration,
                                           should_include_output)

    def _experiments(self) -> Dict[str, Callable[[], ExperimentOutcome]]:
        return {
            'certify': self._certify,
            'distance': self._distance,
            'scatter': self._scatter,
            'xray': self._xray,
            'normal': self._normal,
            'dn': self._dn,
            'identity': self._identity,
            'surjectivity': self._surjectivity,
            'fbp': self._fbp,
            'thm1': self._thm1,
            'thm3': self._thm3,
            'volume': self._volume,
        }

    def _flow(self) -> GeodesicFlow:
        return GeodesicFlow(self.metric, h_ode=self.grid.h_ode)

    def _psi(self):
        return diffeo_from_spec(self.config.psi or DiffeoSpecModel(kind='radial'))

    def _certify(self) -> ExperimentOutcome:
        report = certify_simple(self._flow(), nbeta=self.grid.nbeta, nalpha=self.grid.nalpha,
                                guard=self.grid.guard)
        criteria = [
            criterion('convex', -report.min_second_fundamental_form, 0.0, passed=report.convex),
            criterion('nontrapping', report.trapped_count, 1, passed=report.nontrapping),
            criterion('no_conjugate', report.conjugate_count, 1, passed=report.no_conjugate),
        ]
        return ExperimentOutcome(report, criteria)

    def _distance(self) -> ExperimentOutcome:
        flow = self._flow()
        rng = np.random.default_rng(self.config.seed)
        b1 = rng.uniform(0.0, 2 * np.pi, DISTANCE_PAIRS)
        b2 = rng.uniform(0.0, 2 * np.pi, DISTANCE_PAIRS)
        results = boundary_distances(flow, b1, b2)
        lengths = np.array([r.length for r in results])
        flagged = sum(r.flagged for r in results)
        speed = recover_boundary_metric(lambda a, b: boundary_distance(flow, a, b), 0.0)
        measurements = {'max_length': float(lengths.max()), 'flagged': float(flagged),
                        'tangential_norm_at_0': speed}
        criteria = [criterion('no_bracket_fallbacks', flagged, 1)]
        if self.metric.kind == 'euclidean':
            chord = 2 * np.abs(np.sin(0.5 * (b2 - b1)))
            err = float(np.max(np.abs(lengths - chord)))
            measurements['chord_error'] = err
            criteria.append(criterion('chord_length', err, self.tol.distance))
        rows = [(a, b, d, float(r.flagged)) for a, b, d, r in zip(b1, b2, lengths, results)]
        report = MeasurementReport(name='distance', measurements=measurements)
        return ExperimentOutcome(report, criteria, {'distances': (['beta1', 'beta2', 'length', 'flagged'], rows)})

    def _scatter(self) -> ExperimentOutcome:
        flow = self._flow()
        fan = make_fan(self.metric, self.grid)
        table = scatter(flow, fan)
        # shooting back from the reversed exit lands on the entry point
        x, y, vx, vy = fan.geometry.phase_point(table.beta_out.ravel(), table.alpha_rev.ravel())
        res = flow.shoot(x, y, vx, vy)
        entry = np.mod(np.arctan2(res.exit_y, res.exit_x), 2 * np.pi).reshape(fan.shape)
        bb, aa = fan.mesh()
        reciprocity = float(np.max(np.abs(wrap_angle(entry - bb))))
        measurements = {'reciprocity': reciprocity, 'max_tau': float(np.max(table.tau))}
        criteria = [criterion('reciprocity', reciprocity, self.tol.scattering)]
        if self.metric.kind == 'euclidean':
            err = float(np.max(np.abs(table.tau - 2 * np.cos(aa))))
            measurements['chord_time_error'] = err
            criteria.append(criterion('chord_time', err, self.tol.scattering))
        rows = list(zip(bb.ravel(), aa.ravel(), table.beta_out.ravel(), table.alpha_rev.ravel(), table.tau.ravel()))
        report = MeasurementReport(name='scatter', measurements=measurements)
        return ExperimentOutcome(report, criteria,
                                 {'scattering': (['beta', 'alpha', 'beta_out', 'alpha_rev', 'tau'], rows)})

    def _xray(self) -> ExperimentOutcome:
        flow = self._flow()
        fan = make_fan(self.metric, self.grid)
        f = gaussian_bump(0.3, (0.2, -0.1))
        xf = xray_transform(flow, f, fan)
        pgrid = polar_grid(self.grid)
        traces = FiberTraces(flow, pgrid, self.grid.nphi)
        w = fan.from_callable(tapered_boundary_data(1))
        lhs, rhs, gap = adjointness_gap(flow, DiskGridFunction.from_callable(pgrid, f), w, traces)
        report = MeasurementReport(name='xray', measurements={'pairing_fan': lhs, 'pairing_disk': rhs,
                                                              'adjointness_gap': gap})
        return ExperimentOutcome(report, [criterion('adjointness', gap, self.tol.adjointness)],
                                 {'xray': (['beta', 'alpha', 'value'], list(xf.rows()))})

    def _normal(self) -> ExperimentOutcome:
        pgrid = polar_grid(self.grid)
        f = compact_bump(CONVOLUTION_SUPPORT)
        nf = normal_operator(self._flow(), f, pgrid, self.grid.nphi)
        pairing = nf.inner(DiskGridFunction.from_callable(pgrid, f), self.metric)
        measurements = {'max_value': float(np.max(nf.values)), 'pairing': pairing}
        criteria = [criterion('positive_pairing', -pairing, 0.0)]
        if self.metric.kind == 'euclidean':
            radial = euclidean_convolution_oracle(lambda s: f(s, 0.0), pgrid.r, support=CONVOLUTION_SUPPORT)
            oracle = DiskGridFunction(pgrid, np.repeat(radial[:, None], pgrid.ntheta, axis=1))
            err = (nf - oracle).l2_norm(r_max=CONVOLUTION_SUPPORT) / oracle.l2_norm(r_max=CONVOLUTION_SUPPORT)
            measurements['convolution_error'] = err
            criteria.append(criterion('convolution_oracle', err, self.tol.convolution))
        report = MeasurementReport(name='normal', measurements=measurements)
        return ExperimentOutcome(report, criteria, {'normal': (['r', 'theta', 'value'], list(nf.rows()))})

    def _dn(self) -> ExperimentOutcome:
        pgrid = polar_grid(self.grid)
        modes = self.config.modes
        matrix = dn_matrix(self.metric, modes, pgrid)
        kernel = float(np.max(np.abs(matrix[:, 0])))
        measurements = {'kernel': kernel}
        criteria = [criterion('constants_in_kernel', kernel, self.tol.dn)]

        basis = [BoundaryFunction.mode(pgrid.ntheta, k, kind) for k in range(1, modes + 1) for kind in ('cos', 'sin')]
        basis = basis[:SYMMETRY_PAIRS + 1]
        images = [dn_map(self.metric, b, pgrid) for b in basis]
        weight = boundary_arc_speed(self.metric, pgrid.theta)
        asym = 0.0
        for i in range(len(basis) - 1):
            a = images[i].inner(basis[i + 1], weight)
            b = basis[i].inner(images[i + 1], weight)
            scale = images[i].norm(weight) * basis[i + 1].norm(weight)
            asym = max(asym, abs(a - b) / max(scale, 1e-300))
        measurements['asymmetry'] = asym
        criteria.append(criterion('symmetry', asym, SYMMETRY_TOL))

        ks = np.arange(1, modes + 1)
        diag = np.array([matrix[2 * k - 1, 2 * k - 1] for k in ks])
        if self.metric.kind == 'euclidean':
            err = float(np.max(np.abs(diag + ks) / ks))
            measurements['spectrum_error'] = err
            criteria.append(criterion('flat_spectrum', err, self.tol.dn))
        header = ['row'] + [f"c{j}" for j in range(matrix.shape[1])]
        rows = [(i, *matrix[i]) for i in range(matrix.shape[0])]
        report = MeasurementReport(name='dn', measurements=measurements)
        return ExperimentOutcome(report, criteria, {'dn_matrix': (header, rows)},
                                 {'dn_spectrum': ('|Lambda cos(k t)| against k', ks, np.abs(diag))})

    def _identity(self) -> ExperimentOutcome:
        variant = self.config.variant
        refine = self.config.refine
        if variant == 'conjugate':
            report = check_conjugates(self.metric, self.grid, self.config.modes, self.tol)
            worst = max(r.cauchy_riemann for r in report.rows)
            rows = [(i, r.cauchy_riemann, r.involution, r.exact_error if r.exact_error is not None else np.nan)
                    for i, r in enumerate(report.rows)]
            return ExperimentOutcome(report, [criterion('conjugate', worst, self.tol.cauchy_riemann,
                                                        passed=report.passed)],
                                     {'conjugate': (['mode_index', 'cauchy_riemann', 'involution', 'exact'], rows)})
        if variant == 'transport':
            report = check_transport_identity(self.metric, gaussian_bump(0.4, (0.3, 0.2)), self.grid,
                                              self.tol, refine)
            exact = check_transport_identity(self.metric, lambda x, y: x, self.grid, self.tol,
                                             tol=self.tol.transport_exact)
            criteria = identity_criteria(report, self.tol.transport, refine, self.tol.refinement_ratio)
            criteria.append(criterion('transport-linear', exact.residual, self.tol.transport_exact))
        else:
            report = check_hilbert_identity(self.metric, self.grid, None, self.tol, refine)
            criteria = identity_criteria(report, self.tol.hilbert, refine, self.tol.refinement_ratio)
        header, rows = refinement_table(report)
        levels = [r.level for r in report.refinement]
        residuals = [r.residual for r in report.refinement]
        return ExperimentOutcome(report, criteria, {'refinement': (header, rows)},
                                 {'refinement': (f"{report.name} residual against level", levels, residuals)})

    def _surjectivity(self) -> ExperimentOutcome:
        solver = SurjectivitySolver(self.metric, self.grid)
        w, report, back = solver.solve(gaussian_bump(FBP_SIGMA))
        criteria = [criterion('surjectivity', report.relative_error, self.tol.surjectivity),
                    criterion('iterations', report.iterations, 500)]
        history = report.residual_history
        return ExperimentOutcome(report, criteria,
                                 {'boundary_data': (['beta', 'alpha', 'value'], list(w.rows())),
                                  'backprojection': (['r', 'theta', 'value'], list(back.rows()))},
                                 {'residual_history': ('GCR relative residual', range(len(history)), history)})

    def _fbp(self) -> ExperimentOutcome:
        f = gaussian_bump(FBP_SIGMA)
        calibration = riesz_calibration()
        rec = filtered_backprojection(f, self.grid, validate=False)
        truth = DiskGridFunction.from_callable(rec.grid, f)
        err = (rec - truth).l2_norm(r_max=FBP_RADIUS) / truth.l2_norm(r_max=FBP_RADIUS)
        report = MeasurementReport(name='fbp', measurements={'calibration_error': calibration,
                                                             'reconstruction_error': err})
        criteria = [criterion('calibration', calibration, self.tol.fbp),
                    criterion('reconstruction', err, self.tol.fbp)]
        return ExperimentOutcome(report, criteria, {'reconstruction': (['r', 'theta', 'value'], list(rec.rows()))})

    def _thm1(self) -> ExperimentOutcome:
        if self.config.metric2 is not None:
            g2 = metric_from_spec(self.config.metric2)
        else:
            g2 = pullback(self._psi(), self.metric)
        report = boundary_determination_experiment(self.metric, g2, self.grid, self.tol, self.config.seed)
        criteria = [
            criterion('distances', report.distances.max_error, self.tol.distance, passed=report.distances.passed),
            criterion('boundary_components', report.boundary_component_error, self.tol.boundary_metric),
            criterion('tangential_norm', report.tangential_norm_error, self.tol.boundary_metric),
            criterion('scattering', report.scattering_error, self.tol.scattering),
        ]
        return ExperimentOutcome(report, criteria)

    def _thm3(self) -> ExperimentOutcome:
        report = dn_equality_experiment(self.metric, self._psi(), self.config.modes, self.grid, self.tol,
                                        self.config.seed, refine=self.config.refine)
        values = {
            'distances': report.distances.max_error,
            'conjugate': max(report.conjugate_residuals),
            'surjectivity': max(report.surjectivity_errors),
            'conjugate_hilbert': report.conjugate_hilbert.residual,
            'cauchy_riemann': max(report.cauchy_riemann_residuals),
            'dn': max(report.dn_mismatch),
            'wiring': report.control_residual,
        }
        thresholds = {
            'distances': self.tol.distance,
            'conjugate': self.tol.cauchy_riemann,
            'surjectivity': self.tol.surjectivity,
            'conjugate_hilbert': self.tol.hilbert,
            'cauchy_riemann': self.tol.surjectivity,
            'dn': self.tol.dn,
            'wiring': self.tol.hilbert,
        }
        criteria = [criterion(stage, values[stage], thresholds[stage], passed=ok)
                    for stage, ok in report.stage_passed.items()]
        rows = [(i, c, s, r, d) for i, (c, s, r, d) in enumerate(zip(report.conjugate_residuals,
                                                                       report.surjectivity_errors,
                                                                       report.cauchy_riemann_residuals,
                                                                       report.dn_mismatch))]
        return ExperimentOutcome(report, criteria,
                                 {'modes': (['mode_index', 'conjugate', 'surjectivity', 'cauchy_riemann', 'dn'], rows)})

    def _volume(self) -> ExperimentOutcome:
        direct, boundary, rel = santalo_volume_check(self.metric, self.grid)
        report = MeasurementReport(name='volume', measurements={'quadrature': direct, 'boundary_formula': boundary,
                                                                'relative_difference': rel})
        return ExperimentOutcome(report, [criterion('volume', rel, self.tol.volume)])
