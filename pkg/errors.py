"""
Exception hierarchy shared by every monolab module.

Each class carries the process exit code the experiment runner maps it to.
"""

from typing import List, Optional, Tuple


class MonoLabError(Exception):
    """Base class for all monolab failures."""

    exit_code = 1


class ConfigError(MonoLabError, ValueError):
    """Invalid resolution, parameter or experiment file."""

    exit_code = 2

    def __init__(self, message: str, errors: Optional[List[Tuple[int, str]]] = None):
        self.errors = list(errors or [])
        if self.errors:
            lines = "\n".join(f"  line {line}: {msg}" for line, msg in self.errors)
            message = f"{message}\n{lines}"
        super().__init__(message)


class DomainError(MonoLabError, ValueError):
    """Point or radius outside the chart, the grid or an operation's range."""

    exit_code = 2


class NumericalError(MonoLabError, ArithmeticError):
    exit_code = 3


class ConstructionError(NumericalError):
    """The corrector could not satisfy its inequalities at this resolution."""


class PreconditionError(NumericalError):
    """A field handed to a weak-form check is not admissible."""


class NonConvergenceError(MonoLabError):
    exit_code = 4
