"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """A configuration value violates a documented constraint."""


class DegenerateBeliefError(ValueError):
    """A Gaussian belief has a singular or non-PSD covariance/precision."""


class NumericalFailure(RuntimeError):
    """An estimator could not complete a trial (e.g. singular joint system)."""
