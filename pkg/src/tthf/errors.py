"""Exception hierarchy. Each class carries the CLI exit code for its category."""


class TTHFError(Exception):
    exit_code = 1


class DatasetError(TTHFError):
    """Missing or unreadable dataset files."""

    exit_code = 3


class ValidationError(DatasetError, ValueError):
    """Annotation content violates a record invariant."""


class FormatError(DatasetError, ValueError):
    """Image is not a 3-channel RGB array."""


class EmptyVideoError(DatasetError, ValueError):
    """Video has fewer than two frames."""


class CheckpointError(TTHFError):
    """Checkpoint missing or incompatible with the requested config."""

    exit_code = 4


class TrainingDivergedError(TTHFError):
    exit_code = 5
