"""Exception hierarchy shared by the library and the command line."""


class NsvarError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(NsvarError, ValueError):
    """Malformed configuration, bad references, or inconsistent dimensions."""


class DataError(NsvarError, ValueError):
    """Problems with input data files (ragged rows, non-numeric cells...)."""


class NonlinearRestrictionError(ConfigError):
    """A restriction set cannot be written as linear inequalities in one column of Q."""


class BoundaryCaseError(NsvarError, ValueError):
    """Measure-zero configuration for which no closed form is defined."""


class SamplingError(NsvarError, RuntimeError):
    """A sampler could not produce draws (instability, vanishing acceptance)."""


class ZeroPlausibilityError(NsvarError):
    """Every posterior draw of the reduced form produced an empty identified set."""
