"""Pydantic models for experiment configuration and run reports."""

import json
import os
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

METRIC_PARAM_KEYS = {
    'euclidean': {'pad'},
    'conformal': {'c', 'profile', 'pad'},
    'sheared': {'eps', 'pad'},
    'pullback': {'base', 'psi', 'pad'},
}


def _parse_scalar(text: str) -> Any:
    """Parse an inline parameter value as int, float or bare string."""
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


class DiffeoSpecModel(BaseModel):
    """Model for a built-in boundary-fixing diffeomorphism of the disk."""

    kind: Literal['identity', 'rotation', 'radial'] = Field(
        default='identity',
        description="Diffeomorphism family"
    )
    angle: float = Field(default=0.0, description="Rotation angle in radians")
    amp: float = Field(default=0.05, description="Radial bump displacement amplitude")
    r_in: float = Field(default=0.2, ge=0.0, lt=1.0, description="Inner radius of the bump support")
    r_out: float = Field(default=0.8, gt=0.0, lt=1.0, description="Outer radius of the bump support")

    @model_validator(mode='after')
    def validate_support(self) -> 'DiffeoSpecModel':
        """Validate that the bump support is a proper annulus."""
        if self.r_in >= self.r_out:
            raise ValueError(f"r_in ({self.r_in}) must be smaller than r_out ({self.r_out})")
        return self

    @classmethod
    def parse_inline(cls, text: str) -> 'DiffeoSpecModel':
        """Parse the inline form ``radial,amp=0.05``.

        Args:
            text: Comma separated kind followed by key=value pairs

        Returns:
            Validated DiffeoSpecModel
        """
        parts = [p.strip() for p in text.split(',') if p.strip()]
        if not parts:
            raise ValueError("Empty diffeomorphism specification")
        data: Dict[str, Any] = {'kind': parts[0]}
        for part in parts[1:]:
            if '=' not in part:
                raise ValueError(f"Invalid diffeomorphism parameter '{part}'")
            key, value = part.split('=', 1)
            data[key.strip()] = _parse_scalar(value.strip())
        return cls(**data)


class MetricSpecModel(BaseModel):
    """Model for an analytic metric on the closed unit disk."""

    kind: Literal['euclidean', 'conformal', 'sheared', 'pullback'] = Field(
        default='euclidean',
        description="Metric family"
    )
    params: Dict[str, Any] = Field(
        default_factory=dict,
        description="Family parameters (conformal: c, profile; sheared: eps; pullback: base, psi)"
    )

    @model_validator(mode='after')
    def validate_params(self) -> 'MetricSpecModel':
        """Reject unknown parameter keys and malformed nested specs."""
        allowed = METRIC_PARAM_KEYS[self.kind]
        unknown = set(self.params) - allowed
        if unknown:
            raise ValueError(f"Unknown parameters for metric '{self.kind}': {sorted(unknown)}")
        if self.kind == 'conformal':
            profile = self.params.get('profile', 'constant')
            if profile not in ('constant', 'radial'):
                raise ValueError(f"Invalid conformal profile '{profile}'")
        if self.kind == 'pullback':
            if 'psi' not in self.params:
                raise ValueError("Pullback metric requires a 'psi' diffeomorphism")
            MetricSpecModel.model_validate(self.params.get('base', {'kind': 'euclidean'}))
            psi = self.params['psi']
            if isinstance(psi, str):
                DiffeoSpecModel.parse_inline(psi)
            else:
                DiffeoSpecModel.model_validate(psi)
        pad = self.params.get('pad', 0.3)
        if not isinstance(pad, (int, float)) or pad < 0:
            raise ValueError(f"Invalid evaluation pad '{pad}'")
        return self

    @classmethod
    def parse_inline(cls, text: str) -> 'MetricSpecModel':
        """Parse a metric from a JSON file path or the inline form.

        The inline form is ``kind:conformal,c=0.1,profile=radial``.

        Args:
            text: Path to a JSON document or an inline specification

        Returns:
            Validated MetricSpecModel

        Raises:
            ValueError: If the specification cannot be parsed
        """
        if os.path.isfile(text):
            with open(text, 'r') as f:
                return cls.model_validate(json.load(f))

        parts = [p.strip() for p in text.split(',') if p.strip()]
        if not parts or not parts[0].startswith('kind:'):
            raise ValueError(f"Invalid metric specification '{text}'")
        kind = parts[0][len('kind:'):]
        params: Dict[str, Any] = {}
        for part in parts[1:]:
            if '=' not in part:
                raise ValueError(f"Invalid metric parameter '{part}'")
            key, value = part.split('=', 1)
            params[key.strip()] = _parse_scalar(value.strip())
        return cls(kind=kind, params=params)


class GridModel(BaseModel):
    """Model for the discretization shared by every operator."""

    nr: int = Field(default=64, ge=4, description="Radial intervals of the polar grid")
    ntheta: int = Field(default=128, ge=8, description="Angular nodes of the polar grid")
    nbeta: int = Field(default=128, ge=8, description="Boundary angle nodes of the fan")
    nalpha: int = Field(default=64, ge=4, description="Incidence angle nodes of the fan")
    nphi: int = Field(default=256, ge=8, description="Fiber angle nodes")
    guard: float = Field(default=0.05, gt=0.0, lt=0.5, description="Glancing guard band in radians")
    h_ode: float = Field(default=1e-3, gt=0.0, le=0.1, description="Geodesic integration step")

    @field_validator('ntheta', 'nphi')
    @classmethod
    def validate_even(cls, v: int) -> int:
        """Validate that periodic node counts are even."""
        if v % 2:
            raise ValueError(f"Node count must be even, got {v}")
        return v

    def refined(self, level: int) -> 'GridModel':
        """Return the grid after ``level`` doublings of every resolution."""
        factor = 2 ** level
        return self.model_copy(update={
            'nr': self.nr * factor,
            'ntheta': self.ntheta * factor,
            'nbeta': self.nbeta * factor,
            'nalpha': self.nalpha * factor,
            'nphi': self.nphi * factor,
            'h_ode': self.h_ode / factor,
        })


class ToleranceModel(BaseModel):
    """Model for acceptance tolerances."""

    adjointness: float = Field(default=1e-3, gt=0.0)
    convolution: float = Field(default=1e-2, gt=0.0)
    fbp: float = Field(default=5e-2, gt=0.0)
    transport_exact: float = Field(default=1e-6, gt=0.0)
    transport: float = Field(default=5e-3, gt=0.0)
    hilbert: float = Field(default=5e-2, gt=0.0)
    hilbert_oracle: float = Field(default=1e-6, gt=0.0)
    surjectivity: float = Field(default=5e-2, gt=0.0)
    dn: float = Field(default=1e-2, gt=0.0)
    boundary_metric: float = Field(default=1e-3, gt=0.0)
    distance: float = Field(default=1e-6, gt=0.0)
    scattering: float = Field(default=1e-3, gt=0.0)
    conjugate_loop: float = Field(default=1e-4, gt=0.0)
    cauchy_riemann: float = Field(default=1e-3, gt=0.0)
    refinement_ratio: float = Field(default=1.8, gt=1.0)
    residual_floor: float = Field(default=1e-9, gt=0.0)
    volume: float = Field(default=1e-2, gt=0.0)


class NotificationConfigModel(BaseModel):
    """Model for run notification configuration."""

    notify_on: Literal['all', 'failure', 'never'] = Field(
        default='all',
        description="When to send notifications"
    )
    include_output: Literal['all', 'failure', 'never'] = Field(
        default='all',
        description="When to include the run summary in notifications"
    )


class ExperimentConfigModel(BaseModel):
    """Model for one experiment run."""

    name: str = Field(default='certify', description="Experiment (CLI subcommand) name")
    variant: Optional[Literal['transport', 'hilbert', 'conjugate']] = Field(
        default=None,
        description="Identity variant for the identity experiment"
    )
    metric: MetricSpecModel = Field(default_factory=MetricSpecModel, description="Primary metric")
    metric2: Optional[MetricSpecModel] = Field(default=None, description="Second metric for thm1")
    psi: Optional[DiffeoSpecModel] = Field(default=None, description="Diffeomorphism for thm3")
    grid: GridModel = Field(default_factory=GridModel)
    tolerances: ToleranceModel = Field(default_factory=ToleranceModel)
    seed: int = Field(default=0, ge=0, description="Random seed")
    refine: int = Field(default=0, ge=0, le=4, description="Number of refinement levels")
    modes: int = Field(default=4, ge=1, description="Highest boundary Fourier mode")
    out_dir: str = Field(default='out', description="Output directory")
    plots: bool = Field(default=False, description="Emit SVG plots")
    apprise: List[str] = Field(default_factory=list, description="Apprise notification URLs")
    notification: NotificationConfigModel = Field(default_factory=NotificationConfigModel)


class SimplicityReport(BaseModel):
    """Verdicts of the simplicity certifier."""

    convex: bool
    nontrapping: bool
    no_conjugate: bool
    tau_max_observed: float
    min_second_fundamental_form: float
    conjugate_count: int = 0
    trapped_count: int = 0

    @property
    def simple(self) -> bool:
        return self.convex and self.nontrapping and self.no_conjugate


class SolverStats(BaseModel):
    """Statistics of one linear solve."""

    iterations: int
    residual: float
    converged: bool
    max_principle_excursion: float = 0.0


class RefinementRow(BaseModel):
    """One row of a convergence table."""

    level: int
    nr: int
    nbeta: int
    nalpha: int
    nphi: int
    residual: float
    ratio: Optional[float] = None


class IdentityReport(BaseModel):
    """Two-sided comparison of an identity on a fan grid."""

    name: str
    residual: float = Field(..., ge=0.0)
    lhs_norm: float = Field(..., ge=0.0)
    rhs_norm: float = Field(..., ge=0.0)
    lhs_samples: List[float] = Field(default_factory=list)
    rhs_samples: List[float] = Field(default_factory=list)
    grid: GridModel
    refinement: List[RefinementRow] = Field(default_factory=list)
    passed: bool = True
    flags: List[str] = Field(default_factory=list)


class ConjugateRow(BaseModel):
    """Harmonic conjugate checks for one boundary mode."""

    mode: str
    cauchy_riemann: float = Field(..., ge=0.0)
    involution: float = Field(..., ge=0.0)
    exact_error: Optional[float] = Field(default=None, description="Error against Im(z^k) for the flat metric")


class ConjugateReport(BaseModel):
    """Harmonic conjugate verification over several boundary modes."""

    rows: List[ConjugateRow]
    passed: bool


class SurjectivityReport(BaseModel):
    """Outcome of the constructive backprojection inversion."""

    iterations: int
    residual_history: List[float]
    relative_error: float
    converged: bool
    stagnated: bool = False


class DistanceCheck(BaseModel):
    """Comparison of two boundary distance functions on random pairs."""

    pairs: int
    max_error: float
    passed: bool


class BoundaryDeterminationReport(BaseModel):
    """Boundary determination experiment for a pair of metrics."""

    distances: DistanceCheck
    boundary_component_error: float
    tangential_norm_error: float
    scattering_error: float
    passed: bool


class DNEqualityReport(BaseModel):
    """End-to-end DN map equality experiment."""

    distances: DistanceCheck
    conjugate_residuals: List[float]
    surjectivity_errors: List[float]
    conjugate_hilbert: IdentityReport
    cauchy_riemann_residuals: List[float]
    dn_mismatch: List[float]
    control_residual: float = Field(..., ge=0.0, description="Identity residual on a shuffled scattering table")
    stage_passed: Dict[str, bool]
    passed: bool
    flags: List[str] = Field(default_factory=list)


class MeasurementReport(BaseModel):
    """Named scalar measurements of an experiment without a dedicated report."""

    name: str
    measurements: Dict[str, float] = Field(default_factory=dict)
    flags: List[str] = Field(default_factory=list)


class CriterionResult(BaseModel):
    """One named pass/fail criterion of a run."""

    name: str
    value: float
    threshold: float
    passed: bool


class RunManifest(BaseModel):
    """Echo of a run: configuration, outputs and verdicts."""

    config: ExperimentConfigModel
    version: str
    timestamp: str
    seed: int
    outputs: List[str] = Field(default_factory=list)
    criteria: List[CriterionResult] = Field(default_factory=list)
    error: Optional[str] = None

    @property
    def passed(self) -> bool:
        """True when the run finished and recorded at least one criterion, all passing."""
        return self.error is None and bool(self.criteria) and all(c.passed for c in self.criteria)
