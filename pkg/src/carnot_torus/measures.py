"""Finite atomic measures on the torus."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .group import GroupDescriptor
from .torus import reduce

__all__ = ["DiscreteMeasure"]


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Atoms ``points[j]`` (reduced to [0,1)^n) with real ``weights[j]``."""

    g: GroupDescriptor
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            pts = np.zeros((0, self.g.n))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(pts):
            raise ValueError(f"{len(pts)} atoms but {len(w)} weights")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise ValueError("atoms and weights must be finite")
        pts = reduce(self.g, pts)[0] if len(pts) else pts
        pts.setflags(write=False)
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def dirac(cls, g, x, weight: float = 1.0) -> "DiscreteMeasure":
        return cls(g, np.asarray(x, dtype=float)[None], [weight])

    @classmethod
    def zero(cls, g) -> "DiscreteMeasure":
        return cls(g, np.zeros((0, g.n)), [])

    @classmethod
    def from_grid(cls, g, values) -> "DiscreteMeasure":
        """Atoms at grid nodes with weights ``values / M`` (cell-volume quadrature)."""
        from .torus import grid_nodes
        values = np.asarray(values, dtype=float)
        return cls(g, grid_nodes(values.shape).reshape(-1, g.n), values.reshape(-1) / values.size)

    def __len__(self):
        return len(self.weights)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)

    @property
    def is_probability(self) -> bool:
        return bool(np.all(self.weights >= 0)) and abs(self.total_mass - 1.0) <= 1e-12

    def pair(self, phi) -> float:
        """``<mu, phi>`` for a vectorized function (or GridFunction) ``phi``."""
        if len(self) == 0:
            return 0.0
        return math.fsum(self.weights * np.asarray(phi(self.points), dtype=float))

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        return DiscreteMeasure(self.g, np.concatenate([self.points, other.points]),
                               np.concatenate([self.weights, other.weights]))

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, c: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.g, self.points, self.weights * c)

    __rmul__ = __mul__

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` atom locations with probabilities proportional to the weights."""
        if not self.is_probability:
            raise ValueError("sampling needs a probability measure")
        idx = rng.choice(len(self), size=n, p=self.weights / self.weights.sum())
        return self.points[idx]

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, g, data) -> "DiscreteMeasure":
        if isinstance(data, str):
            data = json.loads(data)
        return cls(g, np.asarray(data["points"], dtype=float).reshape(-1, g.n), data["weights"])
