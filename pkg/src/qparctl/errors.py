"""Exception hierarchy shared by every qparctl module."""


class QparctlError(Exception):
    """Base class for all qparctl failures."""


class RejectedCoefficient(QparctlError, ValueError):
    """Diffusion coefficient is not uniformly parabolic on the sampled range."""


class SolverDiverged(QparctlError):
    """Newton iteration for an implicit step failed to converge."""

    def __init__(self, message, residual=None, time_index=None):
        super().__init__(message)
        self.residual = residual
        self.time_index = time_index


class InverseLookupFailure(QparctlError):
    """Value left the tabulated range of the Kirchhoff primitive."""


class NonellipticCoefficient(QparctlError, ValueError):
    """Frozen coefficient field has a non-positive entry."""


class GateNeverActive(QparctlError):
    """The L-infinity smallness gate never holds within the horizon."""


class HorizonTooShort(QparctlError):
    """A waiting-time gate was not reached before the end of the trajectory."""


class ConstructionFailed(QparctlError):
    """Auxiliary function construction could not satisfy its invariants."""


class ParameterRejected(QparctlError, ValueError):
    """Weight parameters violate their admissibility constraint."""


class CGStalled(QparctlError):
    """Conjugate gradient stopped improving before reaching the tolerance."""

    def __init__(self, message, best=None, residual=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations


class NonSymmetric(QparctlError):
    """The control-to-terminal-state operator failed its symmetry self test."""


class FixedPointDiverged(QparctlError):
    """Picard iteration distance grew three outer iterations in a row."""

    def __init__(self, message, distances=None):
        super().__init__(message)
        self.distances = distances or []


class SafeguardViolated(QparctlError):
    """|g(Y)| exceeds theta0/2 on the control window."""

    def __init__(self, message, x=None, t=None, value=None):
        super().__init__(message)
        self.x = x
        self.t = t
        self.value = value


class AdaptiveWaitExhausted(QparctlError):
    """Phase-2 waiting time hit its doubling cap without a successful control."""


class InfeasibleAtHi(QparctlError):
    """The upper horizon of a time-optimal search is not feasible."""


class ParseError(QparctlError, ValueError):
    """Scenario file could not be parsed."""

    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field


class ValidationError(QparctlError, ValueError):
    """Scenario parsed but violates an invariant."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
