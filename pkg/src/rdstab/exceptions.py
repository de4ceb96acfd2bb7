"""Exception types raised by the stabilization pipeline."""


class RdstabError(Exception):
    """Base class for all package errors."""


class SpectralError(RdstabError):
    """Eigenproblem could not be solved or is degenerate."""


class ControllabilityError(RdstabError):
    """The reduced pair fails the Kalman rank condition."""


class NotHurwitzError(RdstabError):
    """A matrix expected to be Hurwitz has an eigenvalue with Re >= 0."""


class HistoryError(RdstabError):
    """A control history or sampled path does not cover the requested window."""


class SimulationError(RdstabError):
    """Time stepping produced non-finite values."""


class ConfigError(RdstabError):
    """Run configuration failed to parse or validate."""
