class TatError(Exception):
    """Base class for every error raised by the tat_lab apps."""


class InvariantError(TatError, ValueError):
    """A precondition or domain invariant was violated.

    The message always names the invariant so that command-line users can
    see which part of their configuration is wrong.
    """


class CFLError(InvariantError):
    """Time step too large for the grid spacing and the maximal speed."""


class GeometryMismatchError(InvariantError):
    """Two artifacts (e.g. sinogram sidecar and config) describe different detectors."""


class ArrayFormatError(TatError, ValueError):
    """Malformed, truncated or inconsistent array file."""


class SolverDivergenceError(TatError, RuntimeError):
    """Non-finite field, growing residual or CG breakdown."""


class ConfigError(TatError, ValueError):
    """Missing, unreadable or invalid experiment configuration."""
