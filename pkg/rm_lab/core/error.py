from __future__ import annotations


class RmLabError(Exception):
    """rm-lab 基础异常类"""

    def __init__(self, message: str, error_code: str | None = None):
        super().__init__(message)
        self.error_code = error_code


class InputError(RmLabError):
    """Arguments violate an operation's precondition."""

    def __init__(self, message: str = "Invalid input"):
        super().__init__(message, error_code="INVALID_INPUT")


class JetDomainError(InputError):
    """Primitive evaluated outside its domain (division by zero, sqrt of a negative)."""

    def __init__(self, message: str = "Primitive outside its domain", value: float | None = None):
        super().__init__(message)
        self.error_code = "JET_DOMAIN"
        self.value = value


class NumericError(RmLabError):
    """Non-finite value in a loss, gradient or integrand."""

    def __init__(self, message: str = "Non-finite value encountered", index: int | None = None):
        super().__init__(message, error_code="NON_FINITE")
        self.index = index


class TapeReplayError(NumericError):
    """Replaying the tape did not reproduce the recorded values."""

    def __init__(self, message: str = "Tape replay diverged", index: int | None = None):
        super().__init__(message, index=index)
        self.error_code = "TAPE_REPLAY"


class ConfigurationError(RmLabError):
    """Problem or experiment configuration is invalid."""

    def __init__(
        self,
        message: str = "Invalid configuration",
        path: str | None = None,
        line: int | None = None,
    ):
        super().__init__(message, error_code="INVALID_CONFIG")
        self.path = path
        self.line = line

    def __str__(self) -> str:
        text = super().__str__()
        if self.path is None:
            return text
        where = self.path if self.line is None else f"{self.path} (line {self.line})"
        return f"{where}: {text}"


class BasisConstructionError(RmLabError):
    """Subdomain basis failed the orthonormality check."""

    def __init__(self, message: str = "Basis is not orthonormal"):
        super().__init__(message, error_code="BASIS_GRAM")


class RunFailedError(RmLabError):
    """A training run aborted."""

    def __init__(self, message: str = "Run failed"):
        super().__init__(message, error_code="RUN_FAILED")
