"""Monte Carlo projectors ``P_s[Z](eta) = E^{s,eta}[Z]`` and their structural checks.

The nested checks restart inner ensembles from ``(t, omega)``: the outer
path stopped at ``t`` becomes the prefix of every inner path, which is the
``(t, omega)`` indexing of the flow property.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import rng
from .events import PathEvent, check_measurable_before, event_bank
from .path_core import CadlagPath, InitialCondition, TimeGrid
from .sde_engine import EngineConfig, simulate_from_prefixes
from .stats import Moments, z_score

__all__ = [
    "PathRandomVariable",
    "ProjectorEstimate",
    "CompositionReport",
    "FlowReport",
    "BoundViolationError",
    "estimate_projector",
    "verify_projector_composition",
    "verify_flow_property",
    "threshold_event",
    "default_flow_pairs",
    "INNER_BATCH",
]

# paths simulated together when restarting inner ensembles
INNER_BATCH = 16384


class BoundViolationError(ValueError):
    """A path random variable exceeded its declared bound on a sample."""


@dataclass(frozen=True)
class PathRandomVariable:
    """Bounded functional of the path, vectorized as ``z(values, grid) -> (n,)``.

    ``measurability_time = u`` declares that ``z`` only looks at ``[0, u]``.
    """

    z: Callable
    bound: float
    measurability_time: float | None = None
    name: str = "Z"

    def __call__(self, path: CadlagPath) -> float:
        return float(np.asarray(self.z(path.values[None], path.grid))[0])

    def evaluate(self, values: np.ndarray, grid: TimeGrid) -> np.ndarray:
        out = np.broadcast_to(np.asarray(self.z(values, grid), dtype=np.float64), (values.shape[0],))
        if np.any(~(np.abs(out) <= self.bound * (1 + 1e-12))):
            raise BoundViolationError(f"{self.name} exceeds its bound {self.bound} on a sample")
        return out

    @classmethod
    def of_event(cls, event) -> "PathRandomVariable":
        return cls(lambda v, g: event.indicator(v, g).astype(np.float64), 1.0,
                   event.time if event.time is not None else None, f"1[{event.name}]")

    @classmethod
    def constant(cls, c: float) -> "PathRandomVariable":
        return cls(lambda v, g: np.full(v.shape[0], float(c)), abs(float(c)), 0.0, f"{c:g}")

    def __add__(self, other: "PathRandomVariable") -> "PathRandomVariable":
        return PathRandomVariable(
            lambda v, g: self.z(v, g) + other.z(v, g),
            self.bound + other.bound,
            _later(self.measurability_time, other.measurability_time),
            f"({self.name} + {other.name})",
        )

    def __rmul__(self, a: float) -> "PathRandomVariable":
        a = float(a)
        return PathRandomVariable(lambda v, g: a * self.z(v, g), abs(a) * self.bound,
                                  self.measurability_time, f"{a:g}*{self.name}")


def _later(a, b):
    if a is None or b is None:
        return None
    return max(a, b)


@dataclass
class ProjectorEstimate:
    value: float
    stderr: float
    n: int
    init: InitialCondition

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "n": self.n, "s": self.init.s}


class _Sample:
    """Moments plus an exact-constant flag, so degenerate samples stay exact."""

    def __init__(self):
        self.m = Moments()
        self.lo = math.inf
        self.hi = -math.inf

    def add(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.size:
            self.m.add(x)
            self.lo = min(self.lo, float(x.min()))
            self.hi = max(self.hi, float(x.max()))

    @property
    def n(self):
        return self.m.n

    @property
    def mean(self) -> float:
        return self.lo if self.lo == self.hi else float(self.m.mean)

    @property
    def se(self) -> float:
        return 0.0 if self.lo == self.hi else float(self.m.se)


def _engine_for(engine: EngineConfig, z: PathRandomVariable, start: float):
    # simulate only as far as z looks
    if z.measurability_time is None:
        return engine
    u = max(z.measurability_time, start)
    k = engine.grid.snap(u)
    if engine.grid.times[k] < u - 1e-12:
        k += 1
    k = max(k, 1)  # a grid needs at least one step
    return engine.truncated(float(engine.grid.times[k]))


def estimate_projector(engine: EngineConfig, init: InitialCondition, z: PathRandomVariable,
                       n_paths: int, seed: int, stream: int = 0) -> ProjectorEstimate:
    """Sample mean of ``z`` over a fresh ensemble started at ``(s, eta)``."""
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    sub = _engine_for(engine, z, init.s)
    acc = _Sample()
    for b in sub.ensemble(sub.restrict(init), n_paths, seed, stream).batches():
        acc.add(z.evaluate(b.values, sub.grid))
    return ProjectorEstimate(acc.mean, acc.se, acc.n, init)


def _inner_means(engine: EngineConfig, outer_values: np.ndarray, t_index: int,
                 n_inner: int, seed: int, first_outer: int, fn) -> np.ndarray:
    """For each outer path, mean of ``fn`` over ``n_inner`` restarts from ``(t, omega)``.

    ``fn(values)`` returns ``(N,)`` or ``(N, q)``; the result is ``(n_outer,)``
    or ``(n_outer, q)``. Inner paths for outer path ``i`` use the stream
    labelled by its global index, so results do not depend on batching.
    """
    n_outer = outer_values.shape[0]
    group = max(1, INNER_BATCH // n_inner)

    def run(lo):
        hi = min(lo + group, n_outer)
        prefixes = np.repeat(outer_values[lo:hi, : t_index + 1], n_inner, axis=0)
        keys = np.concatenate([
            rng.path_keys(rng.derive_seed(seed, 1, first_outer + i), np.arange(n_inner))
            for i in range(lo, hi)
        ])
        batch = simulate_from_prefixes(engine.coeffs, engine.F, engine.grid, t_index, prefixes, keys)
        vals = np.asarray(fn(batch.values), dtype=np.float64)
        vals = vals.reshape((hi - lo, n_inner) + vals.shape[1:])
        # a constant inner sample is reported exactly, not via a rounded mean
        same = vals.min(axis=1) == vals.max(axis=1)
        return np.where(same, vals[:, 0], vals.mean(axis=1))

    starts = range(0, n_outer, group)
    if engine.workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(engine.workers) as pool:
            chunks = list(pool.map(run, starts))
    else:
        chunks = [run(lo) for lo in starts]
    return np.concatenate(chunks)


@dataclass
class CompositionReport:
    s: float
    t: float
    nested: float
    nested_stderr: float
    direct: float
    direct_stderr: float
    discrepancy: float
    stderr: float
    z: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "test_id": f"composition/s={self.s:g}/t={self.t:g}",
            "s": self.s, "t": self.t,
            "nested": self.nested, "nested_stderr": self.nested_stderr,
            "direct": self.direct, "direct_stderr": self.direct_stderr,
            "estimate": self.discrepancy, "stderr": self.stderr, "z": self.z, "pass": self.passed,
        }


def verify_projector_composition(
    engine: EngineConfig,
    init: InitialCondition,
    z: PathRandomVariable,
    s: float,
    t: float,
    n_outer: int,
    n_inner: int,
    *,
    seed: int = 0,
    z_crit: float = 3.0,
) -> CompositionReport:
    """Nested estimate of ``P_s[P_t[z]](eta)`` against a direct estimate of ``P_s[z](eta)``.

    The direct side uses ``n_outer * n_inner`` paths from an independent
    stream; the nested side averages ``n_outer`` inner means, whose spread
    gives its standard error. The comparison is linear in the inner means,
    so finite ``n_inner`` adds variance but no bias. When ``t == s`` the
    outer stage is degenerate and both sides are the same direct estimate.
    """
    if n_outer < 2 or n_inner < 2:
        raise ValueError("n_outer and n_inner must be >= 2")
    if abs(s - init.s) > 1e-12:
        raise ValueError(f"s={s} does not match the initial condition's start {init.s}")
    if t < s:
        raise ValueError(f"need t >= s, got s={s}, t={t}")
    kt = engine.grid.index(t)
    direct = estimate_projector(engine, init, z, n_outer * n_inner, rng.derive_seed(seed, 2))
    if kt == init.start_index:
        return CompositionReport(s, t, direct.value, direct.stderr, direct.value, direct.stderr,
                                 0.0, 0.0, 0.0, True)
    sub = _engine_for(engine, z, t)
    outer = engine.truncated(t).ensemble(engine.truncated(t).restrict(init), n_outer,
                                         rng.derive_seed(seed, 3))
    nested = _Sample()
    for b in outer.batches():
        means = _inner_means(sub, b.values, kt, n_inner, seed, b.offset,
                             lambda v: z.evaluate(v, sub.grid))
        nested.add(means)
    disc = nested.mean - direct.value
    se = math.hypot(nested.se, direct.stderr)
    zz = float(z_score(disc, se))
    return CompositionReport(float(s), float(t), nested.mean, nested.se, direct.value, direct.stderr,
                             float(disc), float(se), zz, bool(abs(disc) <= z_crit * se + 1e-12))


def threshold_event(T: float, c: float, coord: int = 0) -> PathEvent:
    """``{X_T[coord] > c}``."""
    return PathEvent(lambda v, g: v[:, g.snap(T), coord] > c, T, f"X({T:g})[{coord}] > {c:g}")


def default_flow_pairs(engine: EngineConfig, init: InitialCondition, t: float,
                       n_pairs: int = 4, scale: float = 0.5, seed: int = 0) -> list:
    """Conditioning cylinders before ``t`` paired with threshold events at the horizon."""
    T = engine.grid.horizon
    x0 = init.eta.values[init.start_index]
    bank = event_bank(t, n_pairs + 1, engine.grid, x0, scale, seed, s=init.s)[1:]
    offsets = [0.0, 0.5, -0.5, 1.0]
    return [
        (bank[i], threshold_event(T, float(x0[0]) + scale * offsets[i % len(offsets)]))
        for i in range(n_pairs)
    ]


@dataclass
class FlowReport:
    t: float
    rows: list

    @property
    def passed(self) -> bool:
        return all(r["pass"] for r in self.rows)

    def to_dict(self) -> dict:
        return {"suite": "canonical", "t": self.t, "pass": self.passed, "rows": self.rows}


def verify_flow_property(
    engine: EngineConfig,
    init: InitialCondition,
    event_pairs,
    t: float,
    n_outer: int,
    n_inner: int,
    *,
    seed: int = 0,
    z_crit: float = 3.0,
) -> FlowReport:
    """Integrated flow identity ``E[1_G 1_F] = E[1_G P^{t,omega}(F)]`` per ``(G, F)`` pair.

    ``G`` must be measurable at ``t``. Both sides are computed on the same
    outer paths, so the standard error is that of the per-path difference
    ``1_G (1_F - P^{t,omega}(F))``, inner noise included.
    """
    event_pairs = list(event_pairs)
    if not event_pairs:
        raise ValueError("empty event bank")
    if t < init.s:
        raise ValueError(f"need t >= s, got t={t}")
    kt = engine.grid.index(t)
    grid = engine.grid
    for G, _ in event_pairs:
        check_measurable_before(G, t)
    Fs = []
    for _, F in event_pairs:
        if F not in Fs:
            Fs.append(F)
    outer = engine.ensemble(init, n_outer, rng.derive_seed(seed, 4))
    lhs = [_Sample() for _ in event_pairs]
    rhs = [_Sample() for _ in event_pairs]
    diff = [_Sample() for _ in event_pairs]

    def inner_fn(values):
        return np.stack([F.indicator(values, grid) for F in Fs], axis=1)

    for b in outer.batches():
        values = b.values
        for G, _ in event_pairs:
            check_measurable_before(G, t, values[:64], grid, seed)
        probs = _inner_means(engine, values, kt, n_inner, seed, b.offset, inner_fn)
        for i, (G, F) in enumerate(event_pairs):
            g = G.indicator(values, grid).astype(np.float64)
            f = F.indicator(values, grid).astype(np.float64)
            p = probs[:, Fs.index(F)]
            lhs[i].add(g * f)
            rhs[i].add(g * p)
            diff[i].add(g * f - g * p)
    rows = []
    for i, (G, F) in enumerate(event_pairs):
        d, se = diff[i].mean, diff[i].se
        rows.append({
            "test_id": f"flow/t={t:g}/{i}",
            "G": G.name,
            "F": F.name,
            "lhs": lhs[i].mean, "lhs_stderr": lhs[i].se,
            "rhs": rhs[i].mean, "rhs_stderr": rhs[i].se,
            "estimate": d, "stderr": se,
            "z": float(z_score(d, se)),
            "pass": bool(abs(d) <= z_crit * se + 1e-12),
        })
    return FlowReport(float(t), rows)
