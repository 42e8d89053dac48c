"""Exception hierarchy shared by all modules.

Each class maps to one failure category so the CLI can translate them
into distinct process exit codes.
"""


class SurgiAtmError(Exception):
    """Base class for all package-specific errors."""


class ArgumentError(SurgiAtmError, ValueError):
    """Invalid argument value (even window, zero dimension, bad fraction...)."""


class ShapeError(SurgiAtmError, ValueError):
    """Raster shapes or channel counts do not match the operation contract."""


class DomainError(SurgiAtmError, ValueError):
    """Values outside the required numeric domain (e.g. rho not in [0,1])."""


class FormatError(SurgiAtmError, ValueError):
    """Unsupported or undecodable on-disk image format."""


class EstimationError(SurgiAtmError, ValueError):
    """Statistical estimate undefined for the given sample (degenerate input)."""


class PairingError(SurgiAtmError, ValueError):
    """Prediction/truth/input directories do not align by filename."""


class TrainingError(SurgiAtmError, RuntimeError):
    """Training diverged or was otherwise aborted."""


class CheckFailure(SurgiAtmError, RuntimeError):
    """A verification run (e.g. gradcheck) found violations."""
