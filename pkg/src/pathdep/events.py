"""Cylinder events ``{w(t_1) in B(x_1, r_1), ..., w(t_k) in B(x_k, r_k)}``.

A finite, deterministically seeded bank of such events stands in for the
countable pi-system generating the sigma-field at time ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from . import rng
from .path_core import TimeGrid

__all__ = [
    "AnticipationError",
    "CylinderEvent",
    "PathEvent",
    "WHOLE_SPACE",
    "event_bank",
    "check_measurable_before",
]


class AnticipationError(ValueError):
    """An event or functional looks at the path after the time it is allowed to."""


@dataclass(frozen=True)
class CylinderEvent:
    times: tuple = ()
    centers: tuple = ()
    radii: tuple = ()
    label: str = ""

    @property
    def time(self) -> float:
        return max(self.times, default=0.0)

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if not self.times:
            return "Omega"
        parts = [
            f"X({t:g}) in B({[round(float(x), 6) for x in np.atleast_1d(c)]}, {r:g})"
            for t, c, r in zip(self.times, self.centers, self.radii)
        ]
        return " & ".join(parts)

    def indicator(self, values: np.ndarray, grid: TimeGrid) -> np.ndarray:
        """Boolean membership for a stack of paths ``(n, nodes, m)``."""
        out = np.ones(values.shape[0], dtype=bool)
        for t, c, r in zip(self.times, self.centers, self.radii):
            x = values[:, grid.snap(t)]
            out &= np.sqrt(((x - np.asarray(c)) ** 2).sum(-1)) < r
        return out

    def to_dict(self) -> dict:
        return {
            "times": [float(t) for t in self.times],
            "centers": [[float(v) for v in np.atleast_1d(c)] for c in self.centers],
            "radii": [float(r) for r in self.radii],
            "name": self.name,
        }


WHOLE_SPACE = CylinderEvent(label="Omega")


@dataclass(frozen=True)
class PathEvent:
    """Arbitrary event given by ``fn(values, grid) -> bool array``, declared measurable at ``time``."""

    fn: Callable
    time: float
    name: str = "event"

    def indicator(self, values: np.ndarray, grid: TimeGrid) -> np.ndarray:
        return np.asarray(self.fn(values, grid), dtype=bool)


def check_measurable_before(event, t: float, values: np.ndarray | None = None,
                            grid: TimeGrid | None = None, seed: int = 0) -> None:
    """Raise :class:`AnticipationError` unless ``event`` only looks at ``[0, t]``.

    The declared time is checked first; for opaque :class:`PathEvent` objects
    the indicator is also re-evaluated after scrambling the paths strictly
    after ``t``.
    """
    tol = 1e-12 * max(1.0, t)
    if event.time > t + tol:
        raise AnticipationError(f"event {event.name!r} is declared at {event.time} > {t}")
    if isinstance(event, PathEvent) and values is not None and grid is not None:
        k = grid.snap(t)
        if k + 1 < values.shape[1]:
            gen = np.random.default_rng(rng.derive_seed(seed, 0xA17))
            scrambled = np.array(values)
            scrambled[:, k + 1:] += gen.standard_normal(scrambled[:, k + 1:].shape) * 10.0
            if not np.array_equal(event.indicator(values, grid), event.indicator(scrambled, grid)):
                raise AnticipationError(f"event {event.name!r} depends on the path after {t}")


def _rational_times(t: float, s: float, grid: TimeGrid):
    # dyadic fractions of [s, t], floored onto the grid
    out = []
    for q in (Fraction(1, 1), Fraction(1, 2), Fraction(1, 4), Fraction(3, 4)):
        r = s + float(q) * (t - s)
        out.append(float(grid.times[grid.snap(r)]))
    return sorted(set(out))


def event_bank(t: float, size: int, grid: TimeGrid, center, scale: float = 0.5,
               seed: int = 0, s: float = 0.0) -> list:
    """``size`` events measurable at ``t``: the whole space plus seeded cylinders.

    Centres are lattice points ``center + scale * z`` with ``z`` in
    ``{-2..2}^m``; radii are ``scale`` times one of ``1/2, 1, 2``; times are
    dyadic fractions of ``[s, t]``. Identical arguments give identical banks.
    """
    if size < 1:
        raise ValueError("event bank size must be >= 1")
    center = np.atleast_1d(np.asarray(center, dtype=np.float64))
    gen = np.random.default_rng(rng.derive_seed(seed, 0xE7, grid.snap(t), size))
    times = _rational_times(t, s, grid)
    bank = [WHOLE_SPACE]
    for _ in range(size - 1):
        k = int(gen.integers(1, 3))
        chosen = sorted(gen.choice(len(times), size=min(k, len(times)), replace=False))
        ev_times = tuple(times[i] for i in chosen)
        centers = tuple(
            tuple(center + scale * gen.integers(-2, 3, center.size).astype(float)) for _ in ev_times
        )
        radii = tuple(float(scale * gen.choice([0.5, 1.0, 2.0])) for _ in ev_times)
        bank.append(CylinderEvent(ev_times, centers, radii))
    return bank
