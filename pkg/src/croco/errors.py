"""Exception types shared across the package."""


class CrocoError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CrocoError, ValueError):
    """An input array does not have the dimension the model expects."""


class WeightFileError(CrocoError, ValueError):
    """A weight file could not be parsed or fails validation."""


class SchemaError(CrocoError, ValueError):
    """A CSV file does not match its feature schema."""


class DataError(CrocoError, ValueError):
    """Dataset contents violate an invariant (labels, constant features, ...)."""


class ConfigError(CrocoError, ValueError):
    """A configuration value is outside its allowed domain."""


class PreconditionError(CrocoError, ValueError):
    """An operation was called on an input it is not defined for."""
