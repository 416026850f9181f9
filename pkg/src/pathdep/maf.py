"""Additive functionals along paths: quadratic variation, angular bracket,
density with respect to a clock, and the Jordan split.

An additive functional is a two-time field ``A_{t,u}(omega)``; everything
here evaluates it on grid nodes only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .generator_mp import ProcessFunctional, TestFunction, functional_along
from .path_core import CadlagPath, GridError, TimeGrid
from .sde_engine import CoefficientSet, History, JumpMeasure, coefficient_arrays

__all__ = [
    "AdditiveFunctional",
    "PartitionScheme",
    "QuadraticVariation",
    "MonotonicityError",
    "quadratic_variation",
    "qv_levels",
    "angular_bracket_cylinder",
    "bracket_values",
    "rn_density",
    "rn_density_values",
    "variation_split",
]


class MonotonicityError(ValueError):
    """An input required to be non-decreasing decreased along the path."""


def _identity(times):
    return np.asarray(times, dtype=np.float64)


@dataclass(frozen=True)
class AdditiveFunctional:
    """``A_{t,u}`` on a stack of paths.

    ``increment(t, u, values, grid)`` returns one value per path. When the
    functional is the difference of a process, ``process(values, grid)``
    returns that process at every node, ``(n, nodes)``, and grid increments
    are read off it directly.
    """

    increment: Callable
    process: Callable | None = None
    name: str = "A"

    def __call__(self, t: float, u: float, path: CadlagPath) -> float:
        if t > u:
            raise ValueError(f"need t <= u, got t={t}, u={u}")
        return float(np.asarray(self.increment(t, u, path.values[None], path.grid))[0])

    def node_increments(self, values: np.ndarray, grid: TimeGrid, nodes) -> np.ndarray:
        """Increments over consecutive ``nodes`` (indices), shape ``(n, len(nodes) - 1)``."""
        nodes = np.asarray(nodes, dtype=np.int64)
        if self.process is not None:
            proc = np.asarray(self.process(values, grid), dtype=np.float64)
            return np.diff(proc[:, nodes], axis=1)
        times = grid.times
        out = np.empty((values.shape[0], max(nodes.size - 1, 0)))
        for i in range(nodes.size - 1):
            out[:, i] = self.increment(float(times[nodes[i]]), float(times[nodes[i + 1]]), values, grid)
        return out

    @classmethod
    def from_process(cls, proc: Callable, name: str = "A") -> "AdditiveFunctional":
        """``A_{t,u} = Y_u - Y_t`` for a process ``proc(values, grid) -> (n, nodes)``."""
        def inc(t, u, values, grid):
            y = np.asarray(proc(values, grid), dtype=np.float64)
            return y[:, grid.index(u)] - y[:, grid.index(t)]

        return cls(inc, proc, name)

    @classmethod
    def deterministic(cls, fn: Callable, name: str = "A") -> "AdditiveFunctional":
        """``A_{t,u} = fn(u) - fn(t)`` for a function of time alone."""
        def proc(values, grid):
            return np.broadcast_to(np.asarray(fn(grid.times), dtype=np.float64),
                                   (values.shape[0], len(grid)))

        return cls.from_process(proc, name)

    @classmethod
    def from_maf(cls, phi: ProcessFunctional, s: float = 0.0) -> "AdditiveFunctional":
        """``M[Phi]_{t,u} = Phi_u - Phi_t - int_t^u A(Phi)_r dV_r`` (left-point quadrature)."""
        def proc(values, grid):
            k0 = grid.index(s)
            ph, aph = functional_along(phi, values, grid, k0, len(grid) - 1)
            dV = np.diff(np.asarray(phi.clock(grid.times[k0:]), dtype=np.float64))
            m = np.zeros((values.shape[0], len(grid)))
            m[:, k0 + 1:] = ph[:, 1:] - ph[:, :1] - np.cumsum(aph[:, :-1] * dV, axis=1)
            return m

        return cls.from_process(proc, f"M[{phi.name}]")


ZERO = AdditiveFunctional(lambda t, u, v, g: np.zeros(v.shape[0]),
                          lambda v, g: np.zeros((v.shape[0], len(g))), "0")


@dataclass(frozen=True)
class PartitionScheme:
    """Nested subdivisions of ``[t, u]``, as node indices, coarsest first."""

    t: float
    u: float
    levels: tuple

    @classmethod
    def dyadic(cls, grid: TimeGrid, t: float, u: float, max_level: int | None = None) -> "PartitionScheme":
        """Levels with ``2^k`` equal pieces while every node stays on the grid."""
        kt, ku = grid.index(t), grid.index(u)
        if kt > ku:
            raise ValueError(f"need t <= u, got t={t}, u={u}")
        levels = [np.array([kt, ku])]
        k = 1
        while ku > kt and (max_level is None or k <= max_level):
            pts = t + (u - t) * np.arange(2 ** k + 1) / 2 ** k
            try:
                idx = np.array([grid.index(p) for p in pts])
            except GridError:
                break
            if np.any(np.diff(idx) <= 0):
                break
            levels.append(idx)
            if np.all(np.diff(idx) == 1):
                break
            k += 1
        return cls(float(t), float(u), tuple(levels))

    @classmethod
    def from_times(cls, grid: TimeGrid, levels) -> "PartitionScheme":
        """Explicit levels given as time lists; every time must be a grid node."""
        idx = tuple(np.array([grid.index(float(x)) for x in lvl]) for lvl in levels)
        if not idx:
            raise ValueError("a partition scheme needs at least one level")
        for lv in idx:
            if lv.size < 2 or np.any(np.diff(lv) <= 0):
                raise ValueError("each level must be a strictly increasing list of >= 2 nodes")
            if lv[0] != idx[0][0] or lv[-1] != idx[0][-1]:
                raise ValueError("all levels must share the endpoints")
        return cls(float(grid.times[idx[0][0]]), float(grid.times[idx[0][-1]]), idx)

    def meshes(self, grid: TimeGrid) -> np.ndarray:
        return np.array([float(np.max(np.diff(grid.times[lv]))) if lv.size > 1 else 0.0
                         for lv in self.levels])


def qv_levels(M: AdditiveFunctional, scheme: PartitionScheme, values: np.ndarray,
              grid: TimeGrid) -> np.ndarray:
    """Sum of squared increments per level, shape ``(levels, n)``."""
    values = np.asarray(values)
    if M.process is not None:
        proc = np.asarray(M.process(values, grid), dtype=np.float64)
        return np.stack([(np.diff(proc[:, lv], axis=1) ** 2).sum(axis=1) for lv in scheme.levels])
    return np.stack([(M.node_increments(values, grid, lv) ** 2).sum(axis=1) for lv in scheme.levels])


@dataclass
class QuadraticVariation:
    meshes: np.ndarray
    values: np.ndarray
    cauchy: np.ndarray  # |level k - level k-1|

    @property
    def finest(self) -> float:
        return float(self.values[-1])

    def rows(self) -> list:
        return [{"level": i, "mesh": float(h), "value": float(v)}
                for i, (h, v) in enumerate(zip(self.meshes, self.values))]


def quadratic_variation(M: AdditiveFunctional, scheme: PartitionScheme, path: CadlagPath) -> QuadraticVariation:
    """Level-by-level ``sum_i M_{t_i, t_{i+1}}^2`` along one path."""
    vals = qv_levels(M, scheme, path.values[None], path.grid)[:, 0]
    return QuadraticVariation(scheme.meshes(path.grid), vals, np.abs(np.diff(vals)))


def bracket_values(coeffs: CoefficientSet, F: JumpMeasure, f: TestFunction, t: float, u: float,
                   values: np.ndarray, grid: TimeGrid, g: TestFunction | None = None) -> np.ndarray:
    """Cumulative bracket quadrature ``<M[f], M[g]>_{t, t_k}`` at nodes ``t..u``.

    Integrand at ``t_k``: ``grad f . a grad g + sum_j mass_j (f(x + w_j) - f(x))(g(x + w_j) - g(x))``
    with ``a = sigma sigma^T``; left-point quadrature. Returns ``(n, k_u - k_t + 1)``.
    """
    if t > u:
        raise ValueError(f"need t <= u, got t={t}, u={u}")
    g = f if g is None else g
    kt, ku = grid.index(t), grid.index(u)
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    cmax = np.maximum.accumulate(values[:, : ku + 1], axis=1)
    cmin = np.minimum.accumulate(values[:, : ku + 1], axis=1)
    out = np.zeros((n, ku - kt + 1))
    dts = np.diff(grid.times)
    for i, k in enumerate(range(kt, ku)):
        h = History(float(grid.times[k]), k, values[:, : k + 1], cmax[:, k], cmin[:, k])
        _, sigma, w = coefficient_arrays(coeffs, F, h)
        x = h.current
        a = np.einsum("...ik,...jk->...ij", sigma, sigma)
        rate = np.einsum("ci,cij,cj->c", f.grad(x), a, g.grad(x))
        if F.n_atoms:
            fx, gx = f.f(x), g.f(x)
            for j, mass in enumerate(F.masses):
                xj = x + w[:, j, :]
                rate = rate + mass * (f.f(xj) - fx) * (g.f(xj) - gx)
        out[:, i + 1] = out[:, i] + rate * dts[k]
    return out


def angular_bracket_cylinder(coeffs: CoefficientSet, F: JumpMeasure, f: TestFunction,
                             t: float, u: float, path: CadlagPath, g: TestFunction | None = None) -> float:
    """Predictable bracket ``<M[f], M[g]>_{t,u}`` along one path (``g = f`` by default)."""
    return float(bracket_values(coeffs, F, f, t, u, path.values[None], path.grid, g)[0, -1])


def rn_density_values(A: AdditiveFunctional, V: Callable, values: np.ndarray, grid: TimeGrid,
                      window: int) -> np.ndarray:
    """Density ``h`` of ``A`` against ``dV`` at every node, shape ``(n, nodes)``.

    With ``delta = window * mesh`` and increments over ``[t, t + delta]``:
    ``k = A / (A + delta + dV)``, ``k' = dV / (A + delta + dV)`` and
    ``h = k / k'`` where ``k' != 0``, else 0. Nodes closer than ``delta`` to
    the horizon use the last full window ``[T - delta, T]``.
    """
    window = int(window)
    last = len(grid) - 1
    if window < 1 or window > last:
        raise ValueError(f"window must be between 1 and {last} grid steps, got {window}")
    values = np.asarray(values)
    steps = A.node_increments(values, grid, np.arange(last + 1))
    if np.any(steps < 0):
        raise MonotonicityError(f"{A.name} decreases along the path")
    v = np.asarray(V(grid.times), dtype=np.float64)
    if np.any(np.diff(v) < 0):
        raise MonotonicityError("clock V decreases along the grid")
    lo = np.minimum(np.arange(last + 1), last - window)
    hi = lo + window
    if A.process is not None:
        proc = np.asarray(A.process(values, grid), dtype=np.float64)
    else:
        proc = np.concatenate([np.zeros((values.shape[0], 1)), np.cumsum(steps, axis=1)], axis=1)
    a = proc[:, hi] - proc[:, lo]
    dv = v[hi] - v[lo]
    delta = grid.times[hi] - grid.times[lo]
    denom = a + delta + dv
    k = a / denom
    kp = dv / denom
    safe = np.where(kp != 0, kp, 1.0)
    return np.where(kp != 0, k / safe, 0.0)


def rn_density(A: AdditiveFunctional, V: Callable, path: CadlagPath, window: int,
               grid: TimeGrid | None = None) -> np.ndarray:
    """Density process of ``A`` with respect to the clock ``V`` along ``path``."""
    if grid is not None and grid != path.grid:
        raise GridError("path is not sampled on the given grid")
    return rn_density_values(A, V if V is not None else _identity, path.values[None], path.grid, window)[0]


def variation_split(A: AdditiveFunctional, path: CadlagPath, t: float, u: float) -> tuple[float, float]:
    """Jordan split ``(Pos, Neg)`` of the grid increments of ``A`` on ``[t, u]``."""
    kt, ku = path.grid.index(t), path.grid.index(u)
    if kt > ku:
        raise ValueError(f"need t <= u, got t={t}, u={u}")
    d = A.node_increments(path.values[None], path.grid, np.arange(kt, ku + 1))[0]
    return math.fsum(np.maximum(d, 0.0)), math.fsum(np.maximum(-d, 0.0))
