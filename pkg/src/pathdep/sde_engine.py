"""Euler simulation of path-dependent SDEs with finitely many jump atoms.

Coefficients are vectorized over a batch of paths. Each coefficient is a
callable receiving a :class:`History`, i.e. the batch of paths stopped at the
current node, and returns an array broadcastable to ``(batch, m)`` (drift,
jump size for a given atom) or ``(batch, m, m)`` (diffusion). Because only the
stopped history is handed over, the coefficients are non-anticipative by
construction, and evaluating them at the left node of every step keeps them
predictable.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import rng
from .path_core import CadlagPath, GridMismatchError, InitialCondition, TimeGrid

__all__ = [
    "History",
    "Bounds",
    "CoefficientSet",
    "JumpMeasure",
    "PathEnsemble",
    "Batch",
    "Characteristics",
    "AdmissibilityReport",
    "SimulationError",
    "history_of",
    "coefficient_arrays",
    "iter_batches",
    "simulate",
    "simulate_from_prefixes",
    "characteristics",
    "validate_coefficients",
    "DEFAULT_BATCH_SIZE",
    "EngineConfig",
    "LazyEnsemble",
    "record_coefficients",
]

DEFAULT_BATCH_SIZE = 4096


class SimulationError(RuntimeError):
    """Coefficient evaluation failed or produced malformed output."""


@dataclass(frozen=True)
class History:
    """A batch of paths observed up to (and including) node ``k``."""

    t: float
    k: int
    values: np.ndarray  # (batch, k + 1, m)
    running_max: np.ndarray  # (batch, m)
    running_min: np.ndarray  # (batch, m)

    @property
    def current(self) -> np.ndarray:
        return self.values[:, -1]

    @property
    def batch(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def at(self, t: float, grid: TimeGrid) -> np.ndarray:
        """Value at an earlier time ``t`` (floored to the grid, clamped to ``[0, t_k]``)."""
        j = grid.snap(min(max(t, 0.0), self.t))
        return self.values[:, min(j, self.k)]


def history_of(path: CadlagPath, t: float) -> History:
    """Single-path history of ``path`` stopped at ``t``."""
    k = path.grid.snap(t)
    vals = path.values[None, : k + 1]
    return History(
        t=float(path.grid.times[k]),
        k=k,
        values=vals,
        running_max=vals.max(axis=1),
        running_min=vals.min(axis=1),
    )


@dataclass(frozen=True)
class Bounds:
    beta: float = math.inf
    sigma: float = math.inf
    w: float = math.inf

    @property
    def finite(self) -> bool:
        return all(math.isfinite(b) for b in (self.beta, self.sigma, self.w))


def _zero_beta(h: History):
    return np.zeros(h.dim)


def _zero_sigma(h: History):
    return np.zeros((h.dim, h.dim))


def _zero_w(h: History, y):
    return np.zeros(h.dim)


@dataclass(frozen=True)
class CoefficientSet:
    """Drift ``beta``, diffusion ``sigma`` and jump map ``w`` of the SDE."""

    dim: int
    beta: Callable = _zero_beta
    sigma: Callable = _zero_sigma
    w: Callable = _zero_w
    bounds: Bounds = field(default_factory=Bounds)
    continuous_in_path: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class JumpMeasure:
    """Finite atomic measure ``sum_j mass_j * delta_{y_j}`` on R^m, no atom at 0."""

    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        masses = np.array(self.masses, dtype=np.float64).ravel()
        points = np.array(self.points, dtype=np.float64)
        points = points.reshape(masses.size, points.size // masses.size if masses.size else points.shape[-1])
        if np.any(~np.isfinite(masses)) or np.any(masses <= 0):
            raise ValueError("jump masses must be finite and > 0")
        if np.any(np.all(points == 0.0, axis=1)):
            raise ValueError("the jump measure must not charge 0")
        points.setflags(write=False)
        masses.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def from_atoms(cls, atoms, dim: int = 1) -> "JumpMeasure":
        atoms = list(atoms)
        if not atoms:
            return cls.empty(dim)
        points = [np.atleast_1d(np.asarray(y, dtype=np.float64)) for y, _ in atoms]
        return cls(np.stack(points), [float(mass) for _, mass in atoms])

    @classmethod
    def empty(cls, dim: int = 1) -> "JumpMeasure":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def n_atoms(self) -> int:
        return self.masses.size

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def atoms(self) -> list[tuple[np.ndarray, float]]:
        return [(self.points[j], float(self.masses[j])) for j in range(self.n_atoms)]


def _call(fn, *args, shape, what):
    try:
        out = np.asarray(fn(*args), dtype=np.float64)
        return np.broadcast_to(out, shape)
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise SimulationError(f"{what} evaluation failed: {exc}") from exc


def coefficient_arrays(coeffs: CoefficientSet, F: JumpMeasure, h: History):
    """Evaluate ``(beta, sigma, w)`` on a history, broadcast to full batch shapes.

    Shapes: ``(c, m)``, ``(c, m, m)`` and ``(c, J, m)``.
    """
    c, m = h.batch, h.dim
    beta = _call(coeffs.beta, h, shape=(c, m), what="beta")
    sigma = _call(coeffs.sigma, h, shape=(c, m, m), what="sigma")
    if F.n_atoms:
        w = np.stack(
            [_call(coeffs.w, h, F.points[j], shape=(c, m), what="w") for j in range(F.n_atoms)],
            axis=1,
        )
    else:
        w = np.zeros((c, 0, m))
    return beta, sigma, w


@dataclass
class Batch:
    """Simulated paths ``offset .. offset + len(values) - 1`` of an ensemble.

    When coefficients are recorded, ``beta[:, k]``, ``sigma[:, k]`` and
    ``w[:, k]`` hold the left-node coefficient values used on step ``k``
    (zero before the start node).
    """

    offset: int
    values: np.ndarray
    beta: np.ndarray | None = None
    sigma: np.ndarray | None = None
    w: np.ndarray | None = None


def _euler(coeffs, F, grid, start, prefix, keys, record):
    n_nodes = len(grid)
    c = keys.size
    m = coeffs.dim
    prefix = np.broadcast_to(np.asarray(prefix, dtype=np.float64), (c, start + 1, m))
    values = np.empty((c, n_nodes, m))
    values[:, : start + 1] = prefix
    dts = grid.steps
    tables = [rng.PoissonTable(F.masses[j] * dts[min(start, dts.size - 1)]) for j in range(F.n_atoms)]
    if record:
        rec_beta = np.zeros((c, n_nodes - 1, m))
        rec_sigma = np.zeros((c, n_nodes - 1, m, m))
        rec_w = np.zeros((c, n_nodes - 1, F.n_atoms, m))
    running_max = prefix.max(axis=1)
    running_min = prefix.min(axis=1)
    masses = F.masses
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(start, n_nodes - 1):
            dt = dts[k]
            if tables and tables[0].rate != masses[0] * dt:
                tables = [rng.PoissonTable(masses[j] * dt) for j in range(F.n_atoms)]
            h = History(grid.times[k], k, values[:, : k + 1], running_max, running_min)
            beta, sigma, w = coefficient_arrays(coeffs, F, h)
            xi, counts = rng.normals_and_counts(keys, k, m, tables)
            x = values[:, k]
            incr = beta * dt + np.einsum("cij,cj->ci", sigma, xi) * math.sqrt(dt)
            if F.n_atoms:
                weights = counts - masses * dt
                incr = incr + np.einsum("cj,cji->ci", weights, w)
            values[:, k + 1] = x + incr
            running_max = np.maximum(running_max, values[:, k + 1])
            running_min = np.minimum(running_min, values[:, k + 1])
            if record:
                rec_beta[:, k] = beta
                rec_sigma[:, k] = sigma
                rec_w[:, k] = w
    if record:
        return values, rec_beta, rec_sigma, rec_w
    return values, None, None, None


def simulate_from_prefixes(coeffs, F, grid, start_index, prefixes, keys, record=False) -> Batch:
    """Simulate one path per key, each continuing its own prefix from ``start_index``.

    ``prefixes`` has shape ``(c, start_index + 1, m)`` (or a single shared
    prefix). This is the restart primitive used by nested estimators.
    """
    _check_model(coeffs, F)
    vals, b, s, w = _euler(coeffs, F, grid, start_index, prefixes, np.asarray(keys), record)
    return Batch(0, vals, b, s, w)


def _check_model(coeffs: CoefficientSet, F: JumpMeasure):
    if F.n_atoms and F.points.shape[1] != coeffs.dim:
        raise ValueError(f"jump atoms live in R^{F.points.shape[1]}, coefficients in R^{coeffs.dim}")


def iter_batches(
    coeffs: CoefficientSet,
    F: JumpMeasure,
    init: InitialCondition,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    stream: int = 0,
    batch_size: int = DEFAULT_BATCH_SIZE,
    workers: int = 1,
    record: bool = False,
) -> Iterator[Batch]:
    """Yield the ensemble in path-index order, one fixed-size batch at a time.

    Paths are generated from per-path streams, so the output is the same for
    every ``batch_size`` and ``workers``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if init.grid != grid:
        raise GridMismatchError("initial path and simulation grid differ")
    if init.eta.dim != coeffs.dim:
        raise ValueError(f"initial path has dimension {init.eta.dim}, model has {coeffs.dim}")
    _check_model(coeffs, F)
    start = init.start_index
    prefix = init.prefix
    stream_seed = rng.derive_seed(seed, stream) if stream else seed
    offsets = list(range(0, n_paths, batch_size))

    def run(offset):
        idx = np.arange(offset, min(offset + batch_size, n_paths))
        keys = rng.path_keys(stream_seed, idx)
        vals, b, s, w = _euler(coeffs, F, grid, start, prefix, keys, record)
        return Batch(offset, vals, b, s, w)

    if workers <= 1 or len(offsets) == 1:
        for off in offsets:
            yield run(off)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # bounded look-ahead keeps memory proportional to the worker count
        pending = []
        it = iter(offsets)
        for off in it:
            pending.append(pool.submit(run, off))
            if len(pending) >= workers:
                break
        for off in it:
            yield pending.pop(0).result()
            pending.append(pool.submit(run, off))
        for fut in pending:
            yield fut.result()


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Uniformly weighted sample of paths representing an empirical law."""

    grid: TimeGrid
    values: np.ndarray  # (n, nodes, m)
    start: InitialCondition
    seed: int

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    @property
    def paths(self) -> list[CadlagPath]:
        return [CadlagPath(self.grid, v) for v in self.values]

    def path(self, i: int) -> CadlagPath:
        return CadlagPath(self.grid, self.values[i])

    def at(self, t: float) -> np.ndarray:
        """Values of every path at time ``t``, shape ``(n, m)``."""
        return self.values[:, self.grid.snap(t)]

    def batches(self, batch_size: int = DEFAULT_BATCH_SIZE) -> Iterator[Batch]:
        for off in range(0, self.n, batch_size):
            yield Batch(off, self.values[off: off + batch_size])


def simulate(
    coeffs: CoefficientSet,
    F: JumpMeasure,
    init: InitialCondition,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    batch_size: int = DEFAULT_BATCH_SIZE,
    workers: int = 1,
    stream: int = 0,
) -> PathEnsemble:
    """Materialize an Euler ensemble started from ``init``.

    Each step applies
    ``X += beta*dt + sigma @ xi * sqrt(dt) + sum_j (N_j - mass_j*dt) * w(y_j)``
    with ``N_j ~ Poisson(mass_j * dt)``, coefficients taken at the left node.
    """
    batches = iter_batches(
        coeffs, F, init, grid, n_paths, seed,
        stream=stream, batch_size=batch_size, workers=workers,
    )
    values = np.concatenate([b.values for b in batches], axis=0)
    values.setflags(write=False)
    return PathEnsemble(grid, values, init, seed)


@dataclass(frozen=True)
class Characteristics:
    """Drift integral ``B``, continuous bracket ``C`` and jump intensities of one path."""

    grid: TimeGrid
    B: np.ndarray  # (nodes, m)
    C: np.ndarray  # (nodes, m, m)
    jump_rates: np.ndarray  # (nodes - 1, J): mass_j * 1{w != 0} on each step
    start_index: int

    def nu_intensity(self, t: float, j: int) -> float:
        k = min(self.grid.snap(t), len(self.grid) - 2)
        return float(self.jump_rates[k, j])


def characteristics(coeffs, F, path: CadlagPath, s: float, grid: TimeGrid | None = None) -> Characteristics:
    if grid is not None and grid != path.grid:
        raise GridMismatchError("path is not defined on the requested grid")
    grid = path.grid
    start = grid.index(s)
    n = len(grid)
    m = coeffs.dim
    B = np.zeros((n, m))
    C = np.zeros((n, m, m))
    rates = np.zeros((n - 1, F.n_atoms))
    dts = grid.steps
    for k in range(start, n - 1):
        h = history_of(path, grid.times[k])
        beta, sigma, w = coefficient_arrays(coeffs, F, h)
        B[k + 1] = B[k] + beta[0] * dts[k]
        C[k + 1] = C[k] + sigma[0] @ sigma[0].T * dts[k]
        rates[k] = F.masses * np.any(w[0] != 0.0, axis=-1)
    return Characteristics(grid, B, C, rates, start)


@dataclass
class AdmissibilityReport:
    """Outcome of random probing of the coefficients; advisory only."""

    bounds_ok: bool
    max_norms: dict
    lipschitz_ratio: dict
    violations: list = field(default_factory=list)
    probes: int = 0

    def to_dict(self) -> dict:
        return {
            "bounds_ok": self.bounds_ok,
            "max_norms": self.max_norms,
            "lipschitz_ratio": self.lipschitz_ratio,
            "violations": self.violations,
            "probes": self.probes,
        }


def _random_paths(gen, grid, dim, n, scale):
    steps = gen.standard_normal((n, len(grid) - 1, dim)) * np.sqrt(grid.steps)[None, :, None]
    jumps = (gen.random((n, len(grid) - 1, 1)) < 0.02) * gen.standard_normal((n, len(grid) - 1, dim))
    vals = np.concatenate([gen.standard_normal((n, 1, dim)), np.cumsum(steps + jumps, axis=1)], axis=1)
    return vals * scale


def validate_coefficients(
    coeffs: CoefficientSet,
    probe_budget: int,
    *,
    F: JumpMeasure | None = None,
    grid: TimeGrid | None = None,
    seed: int = 0,
    perturbation: float = 1e-3,
    scale: float = 1.0,
) -> AdmissibilityReport:
    """Probe boundedness and local Lipschitz behaviour of the coefficients.

    Draws ``probe_budget`` random paths and times, compares coefficient norms
    with the declared bounds and records the largest ratio
    ``|c(t, w) - c(t, w')| / sup_{r<=t} |w(r) - w'(r)|`` over perturbed pairs.
    Never raises on a violation; the report lists witnessing ``(t, path)``.
    """
    if probe_budget < 1:
        raise ValueError("probe_budget must be >= 1")
    m = coeffs.dim
    F = F if F is not None else JumpMeasure.from_atoms([(np.ones(m), 1.0)])
    grid = grid if grid is not None else TimeGrid.uniform(1.0, 1.0 / 64)
    gen = np.random.default_rng(rng.derive_seed(seed, 0xC0EF))
    paths = _random_paths(gen, grid, m, probe_budget, scale)
    bumps = gen.uniform(-1.0, 1.0, paths.shape) * perturbation
    ks = gen.integers(0, len(grid) - 1, probe_budget)
    max_norms = {"beta": 0.0, "sigma": 0.0, "w": 0.0}
    ratios = {"beta": 0.0, "sigma": 0.0, "w": 0.0}
    violations = []
    declared = {"beta": coeffs.bounds.beta, "sigma": coeffs.bounds.sigma, "w": coeffs.bounds.w}
    with np.errstate(all="ignore"):
        for i in range(probe_budget):
            k = int(ks[i])
            p = CadlagPath(grid, paths[i])
            q = CadlagPath(grid, paths[i] + bumps[i])
            hp, hq = history_of(p, grid.times[k]), history_of(q, grid.times[k])
            cp = coefficient_arrays(coeffs, F, hp)
            cq = coefficient_arrays(coeffs, F, hq)
            dist = float(np.max(np.linalg.norm(hp.values[0] - hq.values[0], axis=-1)))
            for name, a, b in zip(("beta", "sigma", "w"), cp, cq):
                a, b = a[0], b[0]
                if name == "w":
                    norm = float(np.max(np.linalg.norm(a, axis=-1), initial=0.0))
                    diff = float(np.max(np.linalg.norm(a - b, axis=-1), initial=0.0))
                else:
                    norm = float(np.linalg.norm(a))
                    diff = float(np.linalg.norm(a - b))
                if not np.isfinite(norm) or norm > declared[name] * (1 + 1e-12):
                    violations.append(
                        {"coefficient": name, "t": float(grid.times[k]), "norm": norm,
                         "bound": declared[name], "path": p}
                    )
                max_norms[name] = max(max_norms[name], norm)
                if dist > 0:
                    ratios[name] = max(ratios[name], diff / dist)
    return AdmissibilityReport(
        bounds_ok=not violations,
        max_norms=max_norms,
        lipschitz_ratio=ratios,
        violations=violations,
        probes=probe_budget,
    )


def record_coefficients(coeffs: CoefficientSet, F: JumpMeasure, values: np.ndarray,
                        grid: TimeGrid, start_index: int):
    """Left-node coefficients along given paths, in the layout of :class:`Batch`."""
    c, n, m = values.shape
    rb = np.zeros((c, n - 1, m))
    rs = np.zeros((c, n - 1, m, m))
    rw = np.zeros((c, n - 1, F.n_atoms, m))
    cmax = np.maximum.accumulate(values, axis=1)
    cmin = np.minimum.accumulate(values, axis=1)
    for k in range(start_index, n - 1):
        h = History(grid.times[k], k, values[:, : k + 1], cmax[:, k], cmin[:, k])
        rb[:, k], rs[:, k], rw[:, k] = coefficient_arrays(coeffs, F, h)
    return rb, rs, rw


@dataclass(frozen=True)
class EngineConfig:
    """Everything needed to draw ensembles from arbitrary starting points."""

    coeffs: CoefficientSet
    F: JumpMeasure
    grid: TimeGrid
    batch_size: int = DEFAULT_BATCH_SIZE
    workers: int = 1

    def ensemble(self, init: InitialCondition, n_paths: int, seed: int, stream: int = 0) -> "LazyEnsemble":
        return LazyEnsemble(self, init, n_paths, seed, stream)

    def simulate(self, init: InitialCondition, n_paths: int, seed: int, stream: int = 0) -> PathEnsemble:
        return simulate(self.coeffs, self.F, init, self.grid, n_paths, seed,
                        batch_size=self.batch_size, workers=self.workers, stream=stream)

    def truncated(self, t: float) -> "EngineConfig":
        """Same model on the grid restricted to ``[0, t]``."""
        k = self.grid.index(t)
        if k == len(self.grid) - 1:
            return self
        return EngineConfig(self.coeffs, self.F, TimeGrid(self.grid.times[: k + 1]),
                            self.batch_size, self.workers)

    def restrict(self, init: InitialCondition) -> InitialCondition:
        """Re-express ``init`` on this engine's grid (a prefix of the original)."""
        if init.grid == self.grid:
            return init
        n = len(self.grid)
        if len(init.grid) < n or not np.array_equal(init.grid.times[:n], self.grid.times):
            raise GridMismatchError("initial path grid does not extend the engine grid")
        return InitialCondition(init.s, CadlagPath(self.grid, init.eta.values[:n]))


@dataclass(frozen=True)
class LazyEnsemble:
    """An ensemble described by its generating recipe; paths are produced on demand.

    Iterating twice regenerates bit-identical batches, so large ensembles never
    need to be held in memory.
    """

    engine: EngineConfig
    start: InitialCondition
    n: int
    seed: int
    stream: int = 0

    @property
    def grid(self) -> TimeGrid:
        return self.engine.grid

    def batches(self, record: bool = False) -> Iterator[Batch]:
        e = self.engine
        return iter_batches(e.coeffs, e.F, self.start, e.grid, self.n, self.seed,
                            stream=self.stream, batch_size=e.batch_size,
                            workers=e.workers, record=record)

    def materialize(self) -> PathEnsemble:
        return self.engine.simulate(self.start, self.n, self.seed, self.stream)
