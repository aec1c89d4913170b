"""Exceptions raised across edgeworth, each carrying the CLI exit code it maps to."""

from dataclasses import dataclass
from typing import List, Optional


class EdgeworthError(Exception):
    exit_code = 3


class DomainError(EdgeworthError, ValueError):
    """A value lies outside the domain of the operation (negative holdings, p > 1, ...)."""


# configuration


@dataclass(frozen=True)
class ConfigIssue:
    location: str   # dotted key path, e.g. "trade.noise.delta"
    message: str

    def __str__(self) -> str:
        return f"{self.location}: {self.message}"


class ConfigError(EdgeworthError):
    exit_code = 2

    def __init__(self, issues: List[ConfigIssue]):
        self.issues = list(issues)
        super().__init__("; ".join(str(issue) for issue in self.issues))


class ConfigSyntaxError(ConfigError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}" if line is not None else "unknown position"
        super().__init__([ConfigIssue(where, message)])


class AdmissibilityError(ConfigError):
    """Noise support breaks admissibility: 0 < λβ + μ < 1 and 0 < λα + μ̃ ≤ 1 must hold surely."""

    def __init__(self, message: str, location: str = "trade.noise"):
        super().__init__([ConfigIssue(location, f"noise not admissible: {message}")])


# runtime


class SimulationError(EdgeworthError):
    exit_code = 3


class DegeneratePoolError(SimulationError):
    """x_A + x_B = 0 or y_A + y_B = 0, the percentages are undefined."""


class DegenerateMeansError(SimulationError):
    """m_x = 0 or m_y = 0, the mean-field ratio is undefined."""


class EmptySampleError(SimulationError):
    pass


class InsufficientSampleError(SimulationError):
    pass


class ConservationError(SimulationError):
    pass


# artifacts


class ArtifactError(EdgeworthError):
    exit_code = 4
