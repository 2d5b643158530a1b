"""Exception types shared across the package."""


class DomainError(ValueError):
    """Raised when a time argument falls outside [0, 1]."""


class DivergenceError(FloatingPointError):
    """Raised when an integrator or optimizer produces non-finite values."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class ConfigError(ValueError):
    """Malformed experiment configuration; ``line`` points into the file."""

    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line
