"""Exception hierarchy shared across the package."""


class ReadmitError(Exception):
    """Base class for all errors raised by readmit."""


class ValidationError(ReadmitError, ValueError):
    """A record or request violates the schema.

    ``errors`` maps field name to a human readable message so callers
    (the HTTP layer in particular) can report field-level detail.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = {"_": errors}
        self.errors = dict(errors)
        detail = "; ".join(f"{k}: {v}" for k, v in self.errors.items())
        super().__init__(detail)


class ConfigurationError(ReadmitError, ValueError):
    pass


class CohortIOError(ReadmitError, ValueError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class TrainingError(ReadmitError, ValueError):
    pass


class ModelError(ReadmitError, ValueError):
    """A model file or in-memory model is structurally unusable."""


class UndefinedMetricError(ReadmitError, ValueError):
    """A metric is undefined for the given input (e.g. a single class)."""
