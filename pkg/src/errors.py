"""Exception types shared by every subpackage.

Each class refines a builtin so callers that only know about ``ValueError`` or
``RuntimeError`` keep working.
"""
from __future__ import annotations


class DimensionError(ValueError):
    """Operand shapes do not fit the operation."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class DomainError(ValueError):
    """A numeric argument lies outside the function's domain."""


class ConfigError(ValueError):
    """Malformed config line, unknown key or bad value."""


class FormatError(ValueError):
    """A binary file could not be decoded."""

    def __init__(self, message: str, offset: int, path: str | None = None) -> None:
        where = f"{path} @ byte {offset}" if path else f"byte {offset}"
        super().__init__(f"{message} ({where})")
        self.offset = offset
        self.path = path


class TrainingError(RuntimeError):
    """Optimization produced a non-finite loss or gradient."""

    def __init__(self, message: str, step: int | None = None, param: str | None = None) -> None:
        parts = [message]
        if step is not None:
            parts.append(f"step={step}")
        if param is not None:
            parts.append(f"param={param}")
        super().__init__(" ".join(parts))
        self.step = step
        self.param = param


class MissingArtifactError(FileNotFoundError):
    """An experiment stage needs the output of an earlier stage."""

    def __init__(self, path: str, stage: str) -> None:
        super().__init__(f"missing artifact '{path}' – run `python -m src.cli {stage}` first")
        self.path = path
        self.stage = stage
