"""Exception hierarchy shared by all gazebench modules."""


class WorkbenchError(Exception):
    """Base class for everything raised intentionally by gazebench."""


class ValidationError(WorkbenchError):
    """A domain value violates its documented invariant."""


class ConfigError(ValidationError):
    """Configuration is structurally invalid (unknown key, bad range, ...)."""


class UsageError(WorkbenchError):
    """Command line was used incorrectly (maps to exit code 2)."""


class GeometryError(WorkbenchError):
    """Scene geometry is inconsistent (target behind subject, ...)."""


class ProjectionError(GeometryError):
    """Point cannot be projected (at or behind the camera plane)."""


class RenderError(WorkbenchError):
    """A sample cannot be rasterized; the message names the landmark."""


class PreprocessError(WorkbenchError):
    """Preprocessing failed; `stage` identifies the pipeline step."""

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message if stage is None else f"{stage}: {message}")
        self.stage = stage


class DegenerateInputError(PreprocessError):
    """Inputs too degenerate to preprocess (coincident corners, tiny crop)."""


class OversizeError(PreprocessError):
    """Crop exceeds the fixed canvas; the subject is too close to pad."""


class NumericError(WorkbenchError):
    """Non-finite values appeared during network evaluation."""


class TrainingDivergedError(NumericError):
    """Training loss became non-finite; `epoch` is the failing epoch index."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class WeightsError(WorkbenchError):
    """Base class for weight persistence failures."""


class WeightsVersionError(WeightsError):
    """Weight file uses an unsupported format version."""


class WeightsHashError(WeightsError):
    """Weight file does not match the expected architecture."""


class WeightsCorruptError(WeightsError):
    """Weight file is unreadable or internally inconsistent."""


class DatasetError(WorkbenchError):
    """A required dataset is missing or malformed; names the profile/path."""


class LockError(WorkbenchError):
    """The output directory is already locked by another run."""


class ProtocolError(WorkbenchError):
    """Evaluation protocol misuse (unknown case, duplicate reports, ...)."""
