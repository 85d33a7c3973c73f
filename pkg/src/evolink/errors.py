"""Exception types shared across the package."""


class EvolinkError(Exception):
    """Base class for all evolink errors."""


class LoadError(EvolinkError):
    """A data file could not be parsed (carries the offending line number)."""


class SchemaMismatchError(EvolinkError):
    """A file header or model does not match the expected schema."""


class ConfigError(EvolinkError):
    """A configuration file or object is invalid; the message names the key."""


class DomainError(EvolinkError):
    """A value id was used outside its attribute's domain."""


class UndefinedPairError(EvolinkError):
    """Two records share no present attribute, so no score is defined."""


class BlockingCapError(EvolinkError):
    """An unblocked cross product would exceed the configured size cap."""


class TrainingError(EvolinkError):
    """Training aborted (non-finite loss or an untrainable input)."""


class StageError(EvolinkError):
    """A pipeline stage failed; names the stage and chains the cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
