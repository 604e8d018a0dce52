"""Exception hierarchy shared by all modules."""


class PseudoViewError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(PseudoViewError, ValueError):
    """An argument violates an operation's precondition."""


class DegenerateProjectionError(PseudoViewError, ValueError):
    """A point lies exactly on the camera plane (z = 0)."""


class EmptyGeometryError(PseudoViewError, ValueError):
    """A depth map has no valid pixel to unproject."""


class EmptySamplesError(PseudoViewError, ValueError):
    """No LiDAR point survived projection into the image."""


class InsufficientSamplesError(PseudoViewError, ValueError):
    """Fewer than two usable samples for a scale-shift fit."""


class IllPosedFitError(PseudoViewError, ValueError):
    """All relative depths at the sample pixels are equal."""


class EmptyOverlapError(PseudoViewError, ValueError):
    """Two depth maps share no valid pixel."""


class ShapeError(PseudoViewError, ValueError):
    """A tensor dimension is not divisible by its downsampling factor."""

    def __init__(self, axis, size, factor):
        super().__init__(f"{axis} axis: size {size} is not divisible by factor {factor}")
        self.axis = axis


class ChainingContractError(PseudoViewError, RuntimeError):
    """A segment generator broke the chaining contract."""


class DecodeError(PseudoViewError, ValueError):
    """A file could not be decoded."""


class ManifestError(PseudoViewError, ValueError):
    """A scene manifest failed validation."""

    def __init__(self, message, frame_index=None):
        if frame_index is not None:
            message = f"frame {frame_index}: {message}"
        super().__init__(message)
        self.frame_index = frame_index


class MissingFileError(ManifestError):
    pass


class DimensionMismatchError(ManifestError):
    pass


class InvalidPoseError(ManifestError):
    pass


class ConfigError(PseudoViewError, ValueError):
    """Configuration has unknown keys or out-of-range values."""
