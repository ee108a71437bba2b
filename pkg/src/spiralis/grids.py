"""Discretization descriptors for the dual variable p and the angle beta.

Both grids are uniform and symmetric about 0, and 0 is always a node, so the
distinguished atom location p = 0 (the constant mode) is representable
exactly.  Grid objects are immutable and shared by reference between all
measures living on them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


def _half_count(extent: float, h: float, name: str) -> int:
    if not (extent > 0.0 and h > 0.0):
        raise ConfigError(f"{name}: extent and spacing must be positive")
    n = extent / h
    n_round = round(n)
    if n_round < 1 or abs(n - n_round) > 1e-9 * max(1.0, n):
        raise ConfigError(
            f"{name}: extent {extent} must be an integer multiple of spacing {h}"
        )
    return int(n_round)


@dataclass(frozen=True, eq=False)
class PGrid:
    """Uniform symmetric grid for the Fourier variable p on [-p_max, p_max]."""

    p_max: float = 40.0
    h_p: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "_half", _half_count(self.p_max, self.h_p, "PGrid"))

    @property
    def size(self) -> int:
        return 2 * self._half + 1

    @property
    def nodes(self) -> np.ndarray:
        return self.h_p * np.arange(-self._half, self._half + 1)

    def index_of(self, p: float) -> int | None:
        """Index of the node equal to p, or None when p is off-node."""
        k = round(p / self.h_p)
        if abs(k) > self._half:
            return None
        if abs(p - k * self.h_p) <= 1e-9 * max(1.0, abs(p)):
            return int(k + self._half)
        return None

    def compatible(self, other: "PGrid") -> bool:
        return (
            abs(self.p_max - other.p_max) < 1e-12
            and abs(self.h_p - other.h_p) < 1e-15
        )

    def to_json_dict(self) -> dict:
        return {"p_max": self.p_max, "h_p": self.h_p}

    @staticmethod
    def from_json_dict(d: dict) -> "PGrid":
        return PGrid(p_max=float(d["p_max"]), h_p=float(d["h_p"]))


@dataclass(frozen=True, eq=False)
class BetaGrid:
    """Uniform symmetric grid for the angle beta on [-b_max, b_max].

    The outer w_taper fraction on each end is reserved for the raised-cosine
    taper of the forward transform; physical evaluation uses the strictly
    positive sub-range.
    """

    b_max: float = 200.0
    h_b: float = 0.05
    w_taper: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "_half", _half_count(self.b_max, self.h_b, "BetaGrid"))
        if not (0.0 < self.w_taper <= 0.25):
            raise ConfigError("BetaGrid: w_taper must lie in (0, 0.25]")

    @property
    def size(self) -> int:
        return 2 * self._half + 1

    @property
    def nodes(self) -> np.ndarray:
        return self.h_b * np.arange(-self._half, self._half + 1)

    @property
    def positive_nodes(self) -> np.ndarray:
        return self.h_b * np.arange(1, self._half + 1)

    def to_json_dict(self) -> dict:
        return {"b_max": self.b_max, "h_b": self.h_b, "w_taper": self.w_taper}

    @staticmethod
    def from_json_dict(d: dict) -> "BetaGrid":
        return BetaGrid(
            b_max=float(d["b_max"]),
            h_b=float(d["h_b"]),
            w_taper=float(d.get("w_taper", 0.1)),
        )
