from __future__ import annotations

from typing import Optional


class TreeSIRError(Exception):
    """Base class for every error raised by treesir."""


class DomainError(TreeSIRError, ValueError):
    pass


class PreconditionError(TreeSIRError, ValueError):
    pass


class HorizonError(TreeSIRError):
    """A tabulated object was evaluated past the end of its grid."""


class SingularityError(TreeSIRError):
    pass


class GridAlignmentError(TreeSIRError, ValueError):
    def __init__(self, what: str, value: float, step: float) -> None:
        super().__init__(f"{what}={value!r} is not a multiple of the grid step h={step!r}")
        self.what = what
        self.value = value
        self.step = step


class SolverError(TreeSIRError):
    def __init__(self, message: str, *, node: Optional[int] = None) -> None:
        if node is not None:
            message = f"{message} (node {node})"
        super().__init__(message)
        self.node = node


class ConsistencyError(TreeSIRError):
    pass


class CatalogError(TreeSIRError):
    pass


class ScenarioError(TreeSIRError):
    def __init__(self, message: str, *, field: Optional[str] = None, line: Optional[int] = None) -> None:
        location = []
        if field is not None:
            location.append(f"field '{field}'")
        if line is not None:
            location.append(f"line {line}")
        if location:
            message = f"{message} [{', '.join(location)}]"
        super().__init__(message)
        self.field = field
        self.line = line
