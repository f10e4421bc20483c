"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class ConfigError(ValueError):
    """A configuration value or combination is invalid."""


class BudgetError(ConfigError):
    """A model's parameter count violates the configured budget."""

    def __init__(self, message, count=None):
        super().__init__(message)
        self.count = count


class PatternParseError(ValueError):
    """A hyphenation pattern or exception file is malformed."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class VocabMismatchError(RuntimeError):
    """A checkpoint's vocabulary hashes do not match the supplied vocabulary."""


class NonFiniteGradientError(RuntimeError):
    """A gradient became NaN or infinite."""

    def __init__(self, param_name):
        super().__init__(f"non-finite gradient in parameter '{param_name}'")
        self.param_name = param_name
