"""Exception hierarchy for the geodesic laboratory."""


class LabError(Exception):
    """Base class for every failure raised by the laboratory."""


class PositivityViolation(LabError, ValueError):
    """Metric is not positive definite at a sampled point."""


class DomainEscape(LabError, ValueError):
    """A point left the evaluable pad around the unit disk."""


class GaugeNotInjective(LabError, RuntimeError):
    """Boundary normal gauge Jacobian fell below its floor for every cutoff width."""


class TrappedGeodesic(LabError, RuntimeError):
    """Geodesic did not reach the boundary before the trapping timeout."""


class StepUnderflow(LabError, RuntimeError):
    """Boundary crossing refinement stalled."""


class NoBracket(LabError, RuntimeError):
    """No shooting direction brackets the requested boundary point."""


class OracleFailure(LabError, RuntimeError):
    """A boundary distance oracle could not produce a value."""


class GlancingClip(LabError, RuntimeError):
    """A lookup landed outside the fan guard band and was extrapolated."""


class BoundaryStencil(LabError, RuntimeError):
    """A flow difference stencil left the disk."""


class SolverStall(LabError, RuntimeError):
    """Linear solver exceeded its iteration budget."""


class PathInconsistency(LabError, RuntimeError):
    """Harmonic conjugate loop integrals do not vanish."""


class DistanceMismatch(LabError, ValueError):
    """Two metrics do not share their boundary distance function."""


class NonSimpleExtension(LabError, RuntimeError):
    """The extended disk metric failed simplicity certification."""


class CGStagnation(LabError, RuntimeError):
    """Iterative normal-operator inversion stopped making progress."""
