"""Exception types shared across the package."""


class CvpError(Exception):
    """Base class for all package errors."""


class NumericalFailure(CvpError):
    """A numerical evaluation produced a non-finite or unusable result."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class NotCritical(CvpError):
    """The measure does not satisfy the Euler-Lagrange conditions within tolerance."""

    def __init__(self, deviation, message=None):
        super().__init__(message or f"measure not critical, deviation {deviation:.3e}")
        self.deviation = deviation


class ShapeError(CvpError):
    """Mismatched array lengths or dimensions."""


class OrderUnsupported(CvpError):
    """A derivative of higher order than the model provides was requested."""


class ArgError(CvpError):
    """Invalid argument combination."""


class OutOfRange(CvpError):
    """A dual jet has a component outside the range of the linearized operator."""

    def __init__(self, residual, message=None):
        super().__init__(message or f"dual jet outside operator range, residual {residual:.3e}")
        self.residual = residual


class NotLinearized(CvpError):
    """The supplied jet is not a solution of the linearized field equations."""


class LedgerMissing(CvpError):
    """The series was built without ledger retention."""


class DegenerateFit(CvpError):
    """Slope fit input is degenerate (too few rows or non-positive values)."""


class NotWellPosed(CvpError):
    """Fragmentation ansatz failed the well-posedness check."""


class InconclusiveFit(CvpError):
    """Log-log fit residual too large to decide well-posedness."""


class VanishingLocalTrace(CvpError):
    """tr(psi* psi) vanishes, the local correlation map is undefined."""


class SingularChart(CvpError):
    """The restricted differential of the correlation map is rank deficient."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class NotUnitary(CvpError):
    """Matrix fails the unitarity check."""


class NotOnMinimalStratum(CvpError):
    """|(Uv)^a| != 1 for some subsystem, decomposition undefined."""


class ConfigError(CvpError):
    """Scenario configuration is invalid."""
