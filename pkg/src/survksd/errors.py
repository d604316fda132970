"""Exception types raised across the package.

Every error derives from :class:`SurvKSDError`.  The CLI maps
:class:`StatisticalPreconditionError` subclasses to exit code 1 and
:class:`InputError` subclasses to exit code 2.
"""


class SurvKSDError(Exception):
    """Base class for all package errors."""


class StatisticalPreconditionError(SurvKSDError):
    """A model, operator or sample violates a statistical precondition."""


class InputError(SurvKSDError):
    """Malformed user input (files, spec strings, configs)."""


class ParameterDomainError(StatisticalPreconditionError, ValueError):
    """A parameter lies outside its admissible domain."""


class UnsupportedFamilyError(StatisticalPreconditionError, ValueError):
    """Unknown model or kernel family tag."""


class EmptyInputError(StatisticalPreconditionError, ValueError):
    """An operation received an empty sample."""


class DegenerateSampleError(StatisticalPreconditionError, ValueError):
    """The sample cannot support the requested computation."""


class ModelCoherenceError(StatisticalPreconditionError, ValueError):
    """The evaluators of a null model disagree with each other."""


class BoundaryConditionError(StatisticalPreconditionError):
    """Boundary condition b) fails: the null hazard diverges at 0+."""


class HazardSupportError(StatisticalPreconditionError):
    """The null hazard vanishes at an uncensored observation."""


class TransformOverflowError(StatisticalPreconditionError):
    """F0(T) == 1 for some observation, so it lies outside the model support."""


class CalibrationError(StatisticalPreconditionError):
    """Censoring rate cannot be calibrated to the requested fraction."""


class NumericError(StatisticalPreconditionError):
    """A root finder or quadrature failed to converge."""


class DegenerateVarianceError(StatisticalPreconditionError):
    """Log-rank variance is zero."""


class ConfigError(InputError, ValueError):
    """Invalid experiment or CLI configuration."""


class DataFormatError(InputError, ValueError):
    """Malformed survival data file."""
