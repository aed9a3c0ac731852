"""Exception types shared across the package."""


class SegStyleError(Exception):
    """Base class for all package errors."""


class ContractError(SegStyleError, ValueError):
    """A caller violated an operation precondition (dimension mismatch etc.)."""


class ImageFormatError(SegStyleError):
    """Unsupported or corrupt image file."""


class ManifestError(SegStyleError):
    """Segmentation manifest does not match the documented schema.

    The message names the offending field, e.g. ``instances[2].score``.
    """


class BackendError(SegStyleError):
    """The segmentation backend is unavailable or failed.

    Messages include a remediation hint (use precomputed manifests, install
    the model weights, ...).
    """


class CheckpointError(SegStyleError):
    """Checkpoint file is missing, corrupt, or has an incompatible version."""


class TrainingDivergedError(SegStyleError):
    """Training produced a non-finite loss."""


class PipelineError(SegStyleError):
    """A pipeline stage failed; carries the stage name and the original error."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"pipeline stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
