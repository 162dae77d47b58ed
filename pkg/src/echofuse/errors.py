"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An array did not have the shape a contract requires."""


class ManifestError(ValueError):
    """A dataset manifest violates the schema."""


class ConfigError(ValueError):
    """A configuration document or value is invalid."""


class CheckpointFormatError(RuntimeError):
    """A checkpoint file is missing, has the wrong format tag, or does not match the config."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss; carries the diagnostic dump path."""

    def __init__(self, message: str, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
