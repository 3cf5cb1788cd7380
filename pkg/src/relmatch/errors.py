"""Exception types shared across the package."""


class RelmatchError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(RelmatchError):
    """An operation received tensors with incompatible shapes."""

    def __init__(self, primitive, detail):
        self.primitive = primitive
        self.detail = detail
        super().__init__(f"{primitive}: {detail}")


class NonFiniteError(RelmatchError):
    """A NaN or Inf value was produced or supplied."""


class TapeError(RelmatchError):
    """The computation tape was used out of protocol."""


class OptimizerError(RelmatchError):
    """Optimizer state and registered parameters disagree."""


class DataFormatError(RelmatchError):
    """A data file violates the expected format."""

    def __init__(self, message, path=None, line_number=None):
        self.path = path
        self.line_number = line_number
        prefix = ""
        if path is not None:
            prefix += str(path)
        if line_number is not None:
            prefix += f":{line_number}"
        super().__init__(f"{prefix}: {message}" if prefix else message)


class CheckpointError(RelmatchError):
    """A checkpoint file is corrupt, truncated, or incompatible."""
