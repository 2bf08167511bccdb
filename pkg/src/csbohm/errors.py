"""Exception types raised across the package."""


class CSBohmError(Exception):
    """Base class for all package errors."""


class GridMismatch(CSBohmError, ValueError):
    """Two fields were combined on different grids or time tags."""


class InvalidField(CSBohmError, ValueError):
    """Field values violate a structural invariant (non-finite, bad shape)."""


class DegenerateOverlap(CSBohmError):
    """The amplitude <psi_f|psi_i> is too small to normalise the symmetric fields."""


class DegenerateReduction(CSBohmError):
    """A final state on one particle is incompatible with the joint initial state."""


class PacketTooWide(CSBohmError, ValueError):
    pass


class PacketTooNarrow(CSBohmError, ValueError):
    pass


class StructuralError(CSBohmError, ValueError):
    """Inputs have the wrong shape for the requested operation."""


class TrajectoryError(CSBohmError):
    """Base for integration failures; carries the partial world line if any."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class TurningPointEncountered(TrajectoryError):
    pass


class StagnationPoint(TrajectoryError):
    pass


class LeftGrid(TrajectoryError):
    pass


class LeftTimeWindow(TrajectoryError):
    pass


class RestDensityVanishes(TrajectoryError):
    pass


class UnreliableEstimate(CSBohmError):
    pass


class ConfigError(CSBohmError, ValueError):
    """A configuration document is malformed or references unknown entities."""
