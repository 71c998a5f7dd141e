"""Exception hierarchy.

Every error carries a stable class name so the CLI can print a single
machine-parsable line (``ErrorClass: detail``).
"""


class FlowbenchError(Exception):
    """Base class for all library errors."""


class InputError(FlowbenchError, ValueError):
    """Non-finite entries or otherwise invalid numeric input."""


class ShapeError(FlowbenchError, ValueError):
    """Array dimensions do not match the operation's contract."""


class RankError(FlowbenchError, ValueError):
    """Requested rank outside the admissible range."""


class SymmetryError(FlowbenchError, ValueError):
    """Matrix expected to be Hermitian is not."""


class ConvergenceError(FlowbenchError, ArithmeticError):
    """Eigen/iterative solver residual check failed."""


class IllConditionedError(FlowbenchError, ArithmeticError):
    """Retained singular values are too small relative to the largest."""


class IdentifiabilityError(FlowbenchError, ArithmeticError):
    """Inputs cannot be separated from the state (rank-deficient regression)."""


class ConditioningError(FlowbenchError, ArithmeticError):
    """Regularized correlation matrix is numerically singular."""


class RegularizationError(FlowbenchError, ArithmeticError):
    """Spectral matrix singular at some frequency."""


class FactorizationError(FlowbenchError, ArithmeticError):
    """Spectral factorization did not converge."""


class EstimationError(FlowbenchError, ValueError):
    """Not enough data for the requested estimator."""


class UndefinedMetricError(FlowbenchError, ArithmeticError):
    """Normalizing energy of the truth is zero."""


class WarmupError(FlowbenchError, ValueError):
    """Output requested before the filter history is available."""


class InsufficientHistoryError(FlowbenchError, ValueError):
    """Test record shorter than the warm-up window plus one sample."""


class FormatError(FlowbenchError):
    """File is not a container of a supported version."""


class CorruptionError(FlowbenchError):
    """Container header and payload disagree."""


class SchemaError(FlowbenchError, ValueError):
    """Named arrays do not satisfy a registered schema."""


class ConfigError(FlowbenchError, ValueError):
    """Invalid generator or run configuration."""


class EvaluationError(FlowbenchError):
    """Results and truth cannot be compared."""


class ConjugacyWarning(UserWarning):
    """Forecast of a real model kept a non-negligible imaginary part."""
