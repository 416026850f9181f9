"""Piecewise-constant cadlag paths on a finite time grid.

A path holds one value per grid node and is constant on ``[t_k, t_{k+1})``,
so it is right-continuous with left limits by construction. Times used for
concatenation must be grid nodes; :meth:`TimeGrid.snap` floors an arbitrary
time onto the grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "GridError",
    "GridMismatchError",
    "TimeGrid",
    "CadlagPath",
    "InitialCondition",
    "evaluate",
    "stop",
    "concat",
    "read_path_csv",
    "write_path_csv",
]

# Relative tolerance when deciding whether a float time sits on a grid node.
NODE_TOL = 1e-9


class GridError(ValueError):
    """Time outside the grid, or not a grid node where one is required."""


class GridMismatchError(GridError):
    """Two paths do not share the grid an operation needs."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        times = _frozen(np.ravel(self.times))
        if times.size < 2:
            raise GridError("a grid needs at least two nodes")
        if times[0] != 0.0:
            raise GridError(f"grid must start at 0, got {times[0]}")
        if np.any(np.diff(times) <= 0):
            raise GridError("grid times must be strictly increasing")
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, horizon: float, mesh: float) -> "TimeGrid":
        n = round(horizon / mesh)
        if n < 1 or abs(n * mesh - horizon) > NODE_TOL * max(1.0, horizon):
            raise GridError(f"mesh {mesh} does not divide horizon {horizon}")
        return cls(np.arange(n + 1) * (horizon / n))

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def mesh(self) -> float:
        return float(np.max(self.steps))

    def __len__(self) -> int:
        return self.times.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.times.shape == other.times.shape and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.times.tobytes())

    def _check_range(self, t: float):
        tol = NODE_TOL * max(1.0, self.horizon)
        if not (-tol <= t <= self.horizon + tol):
            raise GridError(f"time {t} outside [0, {self.horizon}]")

    def snap(self, t: float) -> int:
        """Index of the last node ``<= t`` (floor rule, with a small tolerance)."""
        self._check_range(t)
        tol = NODE_TOL * max(1.0, self.horizon)
        return int(np.searchsorted(self.times, t + tol, side="right") - 1)

    def index(self, t: float) -> int:
        """Index of the node equal to ``t``; raises if ``t`` is not a node."""
        k = self.snap(t)
        if abs(self.times[k] - t) > NODE_TOL * max(1.0, self.horizon):
            raise GridError(f"time {t} is not a grid node")
        return k

    def is_node(self, t: float) -> bool:
        try:
            self.index(t)
        except GridError:
            return False
        return True

    def to_dict(self) -> dict:
        return {"times": [float(t) for t in self.times]}


@dataclass(frozen=True, eq=False)
class CadlagPath:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != len(self.grid):
            raise GridError(
                f"expected {len(self.grid)} values (one per node), got shape {values.shape}"
            )
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def constant(cls, grid: TimeGrid, value) -> "CadlagPath":
        value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        return cls(grid, np.broadcast_to(value, (len(grid), value.size)))

    @classmethod
    def from_steps(cls, grid: TimeGrid, jump_times, levels) -> "CadlagPath":
        """Step path equal to ``levels[i]`` from ``jump_times[i-1]`` on.

        ``levels`` has one more entry than ``jump_times``; jump times are
        snapped onto the grid with the floor rule.
        """
        levels = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in levels]
        if len(levels) != len(jump_times) + 1:
            raise ValueError("need len(levels) == len(jump_times) + 1")
        values = np.empty((len(grid), levels[0].size))
        values[:] = levels[0]
        for tau, level in zip(jump_times, levels[1:]):
            values[grid.snap(tau):] = level
        return cls(grid, values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return self.grid.horizon

    def __call__(self, t: float) -> np.ndarray:
        return evaluate(self, t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CadlagPath):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class InitialCondition:
    """Starting point ``(s, eta)``; ``eta`` is taken as frozen after ``s``."""

    s: float
    eta: CadlagPath

    def __post_init__(self):
        k = self.eta.grid.index(self.s)
        object.__setattr__(self, "s", float(self.eta.grid.times[k]))

    @property
    def grid(self) -> TimeGrid:
        return self.eta.grid

    @property
    def start_index(self) -> int:
        return self.grid.index(self.s)

    @property
    def prefix(self) -> np.ndarray:
        """Values of ``eta`` on the nodes of ``[0, s]``."""
        return self.eta.values[: self.start_index + 1]

    @property
    def frozen_path(self) -> CadlagPath:
        return stop(self.eta, self.s)


def evaluate(path: CadlagPath, t: float) -> np.ndarray:
    """Value of ``path`` at time ``t`` under the right-continuous step convention."""
    return path.values[path.grid.snap(t)]


def stop(path: CadlagPath, t: float) -> CadlagPath:
    """The path stopped at ``t``: ``r -> path(min(r, t))``."""
    k = path.grid.snap(t)
    values = np.array(path.values)
    values[k + 1:] = values[k]
    return CadlagPath(path.grid, values)


def concat(eta: CadlagPath, s: float, omega: CadlagPath) -> CadlagPath:
    """``eta`` on ``[0, s)`` followed by ``omega`` on ``[s, horizon]``."""
    if eta.grid != omega.grid:
        raise GridMismatchError("concat needs both paths on the same grid")
    if eta.dim != omega.dim:
        raise GridMismatchError(f"dimension mismatch: {eta.dim} vs {omega.dim}")
    try:
        k = eta.grid.index(s)
    except GridError as exc:
        raise GridMismatchError(f"concatenation time {s} is not a grid node") from exc
    values = np.concatenate([eta.values[:k], omega.values[k:]])
    return CadlagPath(eta.grid, values)


def write_path_csv(path: CadlagPath, target) -> None:
    """Write ``t,x1,...,xm`` rows with LF line endings."""
    header = ["t"] + [f"x{i + 1}" for i in range(path.dim)]
    with open(target, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t, row in zip(path.grid.times, path.values):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_path_csv(source) -> CadlagPath:
    with open(Path(source), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0].strip() != "t" or len(header) < 2:
            raise ValueError(f"{source}: header must be 't,x1,...,xm', got {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{source}: ragged rows")
    return CadlagPath(TimeGrid(data[:, 0]), data[:, 1:])
