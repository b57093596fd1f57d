"""
Common types and data structures shared across the package.
"""

from enum import Enum
from typing import Optional, Any, Dict
from dataclasses import dataclass, field


class OrderingKind(str, Enum):
    """Coordinate ordering used inside an epoch"""
    CYCLIC = "ccd"
    UNIFORM_RANDOM = "rcd"
    RANDOM_PERMUTATION = "rpcd"
    DIAGONAL_WEIGHTED = "rcd-weighted"


class MatrixFamily(str, Enum):
    """Hessian family an experiment runs on"""
    PERTURBED_IDENTITY = "perturbed"
    SPIKE = "spike"
    SPIKED_EIGVEC = "spiked-eigvec"


class EpsRule(str, Enum):
    """How a table derives eps from each delta of its grid"""
    EQUAL = "equal"
    SQRT_DELTA_OVER_10 = "sqrt-delta-over-10"
    FIXED = "fixed"


class VerifySuite(str, Enum):
    """Verification suites runnable from the CLI"""
    IDENTITIES = "identities"
    LEMMAS = "lemmas"
    RECURRENCE = "recurrence"
    FIRST_ITER = "first-iter"
    SCALING = "scaling"


@dataclass
class CheckResult:
    """Result of a numerical check that is reported rather than raised"""
    name: str
    success: bool
    max_error: float = 0.0
    tolerance: Optional[float] = None
    detail: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    def __bool__(self):
        return bool(self.success)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "success": bool(self.success),
            "max_error": self.max_error,
            "tolerance": self.tolerance,
            "detail": self.detail,
            "error": self.error,
        }
