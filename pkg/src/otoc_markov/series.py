"""Time series of OTOC values produced by the propagator and Monte-Carlo runs."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

#: values with magnitude below this are treated as underflowed
UNDERFLOW = 1e-300


def o_infinity(n: int) -> float:
    """Long-time value ``1 + 1 / (4^n - 1)`` of the averaged OTOC."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return 1.0 + 1.0 / (4.0**n - 1.0)


def o_infinity_exact(n: int) -> Fraction:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return 1 + Fraction(1, 4**n - 1)


@dataclass
class OtocSeries:
    """O(i, j, t) for every j, sampled at integer ticks.

    ``values`` and ``deviation`` have shape ``(len(ticks), n)``; column ``j-1``
    holds site ``j``.  ``deviation`` is ``O - O_inf``; when the run evolved the
    deviation vector directly it carries full relative precision far below
    the double-precision resolution of ``values``.
    """

    i: int
    n: int
    ticks: np.ndarray
    values: np.ndarray
    deviation: np.ndarray
    ticks_per_period: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        """Times in periods."""
        return self.ticks / self.ticks_per_period

    def otoc(self, j: int) -> np.ndarray:
        self._check_site(j)
        return self.values[:, j - 1]

    def delta(self, j: int) -> np.ndarray:
        """|O(i, j, t) - O_inf|."""
        self._check_site(j)
        return np.abs(self.deviation[:, j - 1])

    def underflowed(self, j: int) -> np.ndarray:
        return self.delta(j) < UNDERFLOW

    def at_periods(self) -> "OtocSeries":
        """Subsample to integer periods."""
        keep = self.ticks % self.ticks_per_period == 0
        return OtocSeries(self.i, self.n, self.ticks[keep] // self.ticks_per_period,
                          self.values[keep], self.deviation[keep], 1, dict(self.meta))

    def _check_site(self, j):
        if not 1 <= j <= self.n:
            raise ValueError(f"site j={j} out of range 1..{self.n}")
