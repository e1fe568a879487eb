"""Exception types shared across the package."""


class ScaleAdvError(Exception):
    """Base class for package-specific failures."""


class ParseError(ScaleAdvError):
    """A dataset file (cloud, label, calib, manifest, plan) is malformed.

    The message names the offending file and, where it applies, the line.
    """


class DetectorError(ScaleAdvError):
    """An external detector invocation failed or returned unusable output."""


class PlanError(ScaleAdvError):
    """A scale plan does not fit the dataset it is applied to."""


class EmptyDatasetError(ScaleAdvError):
    """An operation that needs annotations received none."""


class NoSolutionError(ScaleAdvError):
    """The bin-deviation solver could not reach the requested divergence."""

    def __init__(self, message: str, best_achieved: float):
        super().__init__(message)
        self.best_achieved = best_achieved
