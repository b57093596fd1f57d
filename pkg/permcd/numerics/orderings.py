"""
Coordinate ordering strategies.

Each strategy yields the zero-based coordinate indices visited during one
epoch of n updates, drawing randomness from a caller-owned numpy Generator.
"""

import logging
from abc import ABC, abstractmethod
from typing import Union

import numpy as np

from permcd.core.errors import InvalidParameterError
from permcd.core.types import OrderingKind
from permcd.numerics.matrices import StructuredHessian

logger = logging.getLogger(__name__)


class OrderingStrategy(ABC):
    """
    Base class for epoch orderings.

    Usage:
        strategy = create_ordering("rpcd", H)
        order = strategy.epoch_indices(rng)
    """

    kind: OrderingKind

    def __init__(self, n: int):
        if n < 1:
            raise InvalidParameterError(f"n must be positive, got {n}")
        self.n = n

    @property
    def produces_permutation(self) -> bool:
        """True if every epoch visits each coordinate exactly once"""
        return False

    @abstractmethod
    def epoch_indices(self, rng: np.random.Generator) -> np.ndarray:
        """Indices for one epoch (length n)"""

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(n={self.n})"


class CyclicOrdering(OrderingStrategy):
    """i(l, j) = j"""

    kind = OrderingKind.CYCLIC

    def __init__(self, n: int):
        super().__init__(n)
        self._order = np.arange(n)
        self._order.setflags(write=False)

    @property
    def produces_permutation(self) -> bool:
        return True

    def epoch_indices(self, rng: np.random.Generator) -> np.ndarray:
        return self._order


class UniformRandomOrdering(OrderingStrategy):
    """i.i.d. uniform coordinates, with replacement"""

    kind = OrderingKind.UNIFORM_RANDOM

    def epoch_indices(self, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.n, size=self.n)


class RandomPermutationOrdering(OrderingStrategy):
    """A fresh uniform permutation per epoch (Fisher-Yates via Generator.permutation)"""

    kind = OrderingKind.RANDOM_PERMUTATION

    @property
    def produces_permutation(self) -> bool:
        return True

    def epoch_indices(self, rng: np.random.Generator) -> np.ndarray:
        return rng.permutation(self.n)


class DiagonalWeightedOrdering(OrderingStrategy):
    """Coordinates drawn with probability proportional to the Hessian diagonal"""

    kind = OrderingKind.DIAGONAL_WEIGHTED

    def __init__(self, weights: np.ndarray):
        weights = np.asarray(weights, dtype=float)
        super().__init__(weights.shape[0])
        if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
            raise InvalidParameterError("Sampling weights must be positive and finite")
        cumulative = np.cumsum(weights)
        self._cumulative = cumulative / cumulative[-1]
        self.probabilities = weights / weights.sum()

    def epoch_indices(self, rng: np.random.Generator) -> np.ndarray:
        draws = rng.random(self.n)
        idx = np.searchsorted(self._cumulative, draws, side="right")
        # guards draws landing on the final rounded boundary
        return np.minimum(idx, self.n - 1)


_STRATEGIES = {
    OrderingKind.CYCLIC: CyclicOrdering,
    OrderingKind.UNIFORM_RANDOM: UniformRandomOrdering,
    OrderingKind.RANDOM_PERMUTATION: RandomPermutationOrdering,
}


def create_ordering(kind: Union[str, OrderingKind], H: StructuredHessian) -> OrderingStrategy:
    """
    Instantiate the strategy for ``kind`` on Hessian ``H``.

    Raises:
        InvalidParameterError: If the kind is unknown
    """
    try:
        kind = OrderingKind(kind)
    except ValueError:
        raise InvalidParameterError(
            f"Unknown ordering '{kind}'. Available: {[k.value for k in OrderingKind]}"
        )
    if kind is OrderingKind.DIAGONAL_WEIGHTED:
        return DiagonalWeightedOrdering(H.diagonal)
    return _STRATEGIES[kind](H.n)
