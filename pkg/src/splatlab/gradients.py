"""Per-primitive gradient container shared by renderer, loss and optimizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .primitives import PrimitiveSet

__all__ = ["ATTR_GROUPS", "ParamGrads"]

# Attribute groups in canonical order; each group has its own learning
# rate and its own optimizer state slice.
ATTR_GROUPS = ("mu", "kappa", "rot", "tau", "color")


@dataclass
class ParamGrads:
    """Gradients with the same shapes as the raw parameter arrays."""

    mu: np.ndarray
    kappa: np.ndarray
    rot: np.ndarray
    tau: np.ndarray
    color: np.ndarray

    @staticmethod
    def zeros(n: int) -> "ParamGrads":
        return ParamGrads(
            mu=np.zeros((n, 2)), kappa=np.zeros((n, 2)), rot=np.zeros(n),
            tau=np.zeros(n), color=np.zeros((n, 3)),
        )

    @staticmethod
    def zeros_like(pset: PrimitiveSet) -> "ParamGrads":
        return ParamGrads.zeros(len(pset))

    def __getitem__(self, attr: str) -> np.ndarray:
        return getattr(self, attr)

    def __setitem__(self, attr: str, value: np.ndarray) -> None:
        setattr(self, attr, value)

    def __iadd__(self, other: "ParamGrads") -> "ParamGrads":
        for attr in ATTR_GROUPS:
            self[attr] += other[attr]
        return self

    def finite_check(self):
        """Ids of primitives carrying a non-finite gradient, or None."""
        bad = np.zeros(len(self.tau), dtype=bool)
        for attr in ATTR_GROUPS:
            g = self[attr]
            finite = np.isfinite(g) if g.ndim == 1 else np.isfinite(g).all(axis=1)
            bad |= ~finite
        ids = np.flatnonzero(bad)
        return ids if ids.size else None
