"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NumericsError(ArithmeticError):
    """An operation produced NaN or Inf; tensors must stay finite."""


class ConfigError(ValueError):
    """A configuration field is missing, unknown, or invalid."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


class UnsupportedFormatError(ValueError):
    """Audio or cache file is not in the supported format."""


class UtteranceTooShortError(ValueError):
    """Input has too few frames for the model's kernels and strides."""


class InfeasibleTargetError(ValueError):
    """Target sequence cannot be aligned within the given frame count."""


class ArpaParseError(ValueError):
    """Malformed ARPA language-model file."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")
