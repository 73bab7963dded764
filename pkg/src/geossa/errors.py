"""
Exception hierarchy for geossa.

Every error carries a snake_case ``category`` that the CLI prints as the
machine-parsable part of its one-line failure message, and the process
``exit_code`` it maps to.
"""
from typing import Optional


class GeossaError(Exception):
    """Base class for all geossa errors."""

    category: str = "geossa_error"
    exit_code: int = 1

    def __init__(self, message: str = "") -> None:
        super().__init__(message or self.category)
        self.message = message or self.category


class NotSpd(GeossaError):
    """A matrix failed the symmetric positive definite checks."""

    category = "not_spd"

    def __init__(self, message: str, eigenvalue: Optional[float] = None) -> None:
        if eigenvalue is not None:
            message = f"{message} (offending eigenvalue {eigenvalue:.6e})"
        super().__init__(message)
        self.eigenvalue = eigenvalue


class DimMismatch(GeossaError):
    category = "dim_mismatch"


class BadDims(GeossaError):
    category = "bad_dims"


class SingularTransform(GeossaError):
    category = "singular_transform"

    def __init__(self, condition: float) -> None:
        super().__init__(f"transform condition number {condition:.3e} exceeds cap")
        self.condition = condition


class RankDeficient(GeossaError):
    category = "rank_deficient"


class NoConvergence(GeossaError):
    """An iterative mean did not reach its tolerance."""

    category = "no_convergence"

    def __init__(self, iterations: int, residual: float) -> None:
        super().__init__(
            f"no convergence after {iterations} iterations (residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


class InsufficientData(GeossaError):
    category = "insufficient_data"


class DegenerateSegment(GeossaError):
    category = "degenerate_segment"


class BadWindow(GeossaError):
    category = "bad_window"


class GenerationFailure(GeossaError):
    category = "generation_failure"


class EmptyClass(GeossaError):
    category = "empty_class"


class MixedLabels(GeossaError):
    """Class labels of more than one type, e.g. 1 and "1"."""

    category = "mixed_labels"
    exit_code = 2


class AllRestartsFailed(GeossaError):
    category = "all_restarts_failed"


class ConfigError(GeossaError):
    category = "config_error"
    exit_code = 2


class SchemaError(GeossaError):
    category = "schema_error"
    exit_code = 2


class InputNotFound(GeossaError):
    category = "input_not_found"
    exit_code = 2


class OrderingViolation(GeossaError):
    category = "ordering_violation"
    exit_code = 3
