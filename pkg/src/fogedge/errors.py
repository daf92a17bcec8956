"""Exception hierarchy shared by the library and the command line."""


class FogEdgeError(Exception):
    """Base class for all package errors."""


class ConfigError(FogEdgeError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(FogEdgeError, ValueError):
    """Missing, malformed or inconsistent data files."""


class ShapeError(FogEdgeError, ValueError):
    """Tensor or window geometry does not match the model."""


class TrainingError(FogEdgeError, RuntimeError):
    """Training could not proceed (empty data, non-finite loss)."""


class SimulationError(FogEdgeError, RuntimeError):
    """Network simulation failed to make progress or was misconfigured."""
