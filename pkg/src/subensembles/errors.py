"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid spec, shape mismatch, or argument outside its contract."""


class NumericalError(ArithmeticError):
    """A kernel produced a non-finite value (NaN/Inf is a hard error)."""


class DataFormatError(ValueError):
    """Malformed dataset file: bad magic, truncation, count mismatch."""


class TrainingError(RuntimeError):
    """Training diverged; the message names the failing member."""
