"""Exception types shared across the package.

Every error raised deliberately by this package derives from VbonesError so
callers (and the CLI) can distinguish our failures from genuine bugs.
"""


class VbonesError(Exception):
    """Base class for all package errors."""


class ValidationError(VbonesError, ValueError):
    """An input violated a documented precondition."""


class ConfigurationError(VbonesError, ValueError):
    """A config object or config file is inconsistent or out of range."""


class BehindCameraError(VbonesError, ValueError):
    """A 3D point with non-positive depth was passed to the projector."""


class DegenerateBoneError(VbonesError, ValueError):
    """A bone with zero length cannot define a direction."""

    def __init__(self, message: str, bone_index: int = -1):
        super().__init__(message)
        self.bone_index = bone_index


class IncompatibleCheckpointError(VbonesError, RuntimeError):
    """A checkpoint does not match the model it is being loaded into."""


class TrainingDivergenceError(VbonesError, RuntimeError):
    """Training produced a non-finite loss and was aborted."""


class IngestionError(VbonesError, RuntimeError):
    """A dataset directory is malformed or incomplete."""


class GenerationError(VbonesError, RuntimeError):
    """The synthetic generator could not satisfy its constraints."""
