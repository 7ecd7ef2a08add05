"""Exception hierarchy for the mfmarket package."""


class MfmError(Exception):
    """Base class for all package errors."""


class ConfigError(MfmError):
    """Invalid configuration, parameter domain violation, or malformed spec."""


class ShapeError(MfmError):
    """Mismatched grids or array shapes between path objects."""


class AdmissibilityError(MfmError):
    """A strategy left the admissible region (component below the floor)."""


class InvalidStrategyError(MfmError):
    """A weight vector cannot be projected onto the simplex."""


class AssumptionError(MfmError):
    """A model non-degeneracy assumption was violated during simulation."""


class UnsupportedModelError(MfmError):
    """Requested operation is not available for this model variant."""


class StatisticalPowerError(MfmError):
    """Too few Monte Carlo paths to produce the requested statistic."""


class InvariantError(MfmError):
    """An input violates a structural invariant (e.g. a decreasing G series)."""
