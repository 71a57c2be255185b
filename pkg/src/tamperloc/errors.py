"""Exception hierarchy shared by every stage of the pipeline."""


class TamperlocError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TamperlocError):
    """Invalid configuration, unknown backend, bad ablation wiring."""


class InputError(TamperlocError, ValueError):
    """Rejected input data (non-finite pixels, bad shapes, bad labels)."""


class ContractError(TamperlocError):
    """A component returned or received data violating its interface."""


class ConstraintViolation(TamperlocError):
    """Learnable weights do not satisfy their projection constraint."""


class NotInitializedError(TamperlocError):
    """Parameters were requested before initialization."""


class SequencingError(TamperlocError):
    """An operation was called out of its required order."""


class BackendError(TamperlocError):
    """The proposal backend failed."""


class GenerationError(TamperlocError):
    """A synthetic sample generator could not satisfy its constraints."""


class UnsupportedPerturbation(TamperlocError):
    """A perturbation kind needs a codec that is not available."""


class ManifestError(TamperlocError):
    """A manifest row could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UndefinedMetric(TamperlocError):
    """The metric is undefined for this input (e.g. AUC on a single class)."""


class DataError(TamperlocError):
    """Missing or unreadable data files, empty manifests."""


class DivergenceError(TamperlocError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at step {step}")


class CheckpointError(TamperlocError):
    """Base class for checkpoint problems."""


class IntegrityError(CheckpointError):
    """Checkpoint file is truncated or its checksum does not match."""


class VersionError(CheckpointError):
    """Checkpoint format version is not supported; needs migration."""


class IncompatibleCheckpoint(CheckpointError):
    """Checkpoint arrays do not fit the model built from the config."""
