"""Exception hierarchy shared by the numerical core and the CLI."""

from typing import Optional


class TasepError(Exception):
    """Base class for every error raised by the toolkit."""


class DomainError(TasepError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ProfileError(TasepError, ValueError):
    """Height profile violating the {0,1} gradient constraint or window rules."""


class InsufficientMarginError(ProfileError):
    """Mobility requested at a site whose neighbourhood leaves a frozen window."""


class GridError(TasepError, ValueError):
    """Fields live on incompatible grids and would need resampling."""


class PathSpaceError(TasepError, ValueError):
    """Macroscopic field leaving the path space (slope or monotonicity)."""


class TriangulationError(TasepError, ValueError):
    def __init__(self, message: str, triangle_id: Optional[tuple] = None):
        super().__init__(message)
        self.triangle_id = triangle_id


class ClosedFormError(TasepError, ValueError):
    def __init__(self, message: str, identity: str):
        super().__init__(f"{identity}: {message}")
        self.identity = identity


class ConfigurationError(TasepError, ValueError):
    """Invalid experiment or solver configuration."""


class ConsistencyError(TasepError, ValueError):
    """Inputs that should agree on a conserved quantity do not."""


class ConstructionError(TasepError, RuntimeError):
    """Geometric construction reached a state it should never reach."""


class StateSpaceError(TasepError, RuntimeError):
    def __init__(self, message: str, count: int):
        super().__init__(f"{message} (states: {count})")
        self.count = count


class IntegratorError(TasepError, RuntimeError):
    """ODE integration failed to meet its tolerance."""


class SupportError(TasepError, ZeroDivisionError):
    """State outside the support of the conditioning function."""


class UnsafeWindowError(TasepError, ValueError):
    """Observation window touched by boundary influence or outside the record."""
