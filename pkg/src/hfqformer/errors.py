"""Exception types shared across the package."""


class HfqError(Exception):
    """Base class for all errors raised by hfqformer."""


class DimensionError(HfqError, ValueError):
    pass


class LengthError(HfqError, ValueError):
    pass


class ConfigError(HfqError, ValueError):
    pass


class ContractError(HfqError, RuntimeError):
    pass


class FormatError(HfqError, ValueError):
    """A file does not follow its on-disk format (bad magic, version, truncation)."""


class SchemaError(HfqError, ValueError):
    """A well-formed file does not match the tensors a model expects."""


class DomainError(HfqError, ValueError):
    pass


class TrainingError(HfqError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
