"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value (bad fraction, unknown model name, ...)."""


class CdrFormatError(ValueError):
    """Raw CDR file does not match the expected schema."""


class CausalityError(AssertionError):
    """A time went backwards somewhere upstream (contract violation)."""


class InvalidQueryError(ValueError):
    """Ill-formed candidate-link query, e.g. identical endpoints."""


class ShapeError(ValueError):
    """Tensor operands have incompatible shapes."""
