"""Exception types shared across the package."""


class ShapeError(ValueError):
    """A tensor or parameter does not satisfy a shape contract."""


class ConfigError(ValueError):
    """Invalid or inconsistent user-supplied configuration."""


class FormatError(ValueError):
    """A serialized artifact (checkpoint, manifest) is malformed."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
