"""Generator of the path-dependent SDE and martingale-problem checks.

For ``f`` in C^2_b,

    A_t f = beta . grad f(X_t) + 1/2 Tr(sigma sigma^T hess f(X_t))
            + sum_j mass_j (f(X_t + w(y_j)) - f(X_t) - grad f(X_t) . w(y_j)).

Under a weak solution every ``f(X) - int A_r f dr`` is a martingale after the
start time; :func:`verify_martingale_problem` tests the integrated form
``E[(M_u - M_t) 1_G] = 0`` over a bank of events ``G`` known at ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .events import check_measurable_before, event_bank
from .path_core import CadlagPath, InitialCondition, TimeGrid
from .sde_engine import (
    CoefficientSet,
    EngineConfig,
    History,
    JumpMeasure,
    coefficient_arrays,
    history_of,
    record_coefficients,
)
from .stats import Moments, bonferroni_z, z_score

__all__ = [
    "TestFunction",
    "TrigFunction",
    "ProcessFunctional",
    "MartingaleTestReport",
    "WeakGeneratorReport",
    "UnboundedFunctionError",
    "trig_family",
    "generator_values",
    "apply_generator",
    "check_derivatives",
    "maf_from_generator",
    "maf_increments",
    "functional_along",
    "verify_martingale_problem",
    "verify_weak_generator",
    "time_functional",
]


class UnboundedFunctionError(ValueError):
    """A test function or functional exceeded its declared sup-norm bound."""


@dataclass(frozen=True)
class TestFunction:
    """A C^2_b function on R^m with exact first and second derivatives.

    All three callables are vectorized over leading axes: ``f(x)`` maps
    ``(..., m)`` to ``(...)``, ``grad`` to ``(..., m)`` and ``hess`` to ``(..., m, m)``.
    """

    __test__ = False  # not a pytest class

    f: Callable
    grad: Callable
    hess: Callable
    bound: float
    name: str = "f"

    def __call__(self, x):
        return self.f(x)

    def __add__(self, other: "TestFunction") -> "TestFunction":
        return TestFunction(
            lambda x: self.f(x) + other.f(x),
            lambda x: self.grad(x) + other.grad(x),
            lambda x: self.hess(x) + other.hess(x),
            self.bound + other.bound,
            f"({self.name} + {other.name})",
        )

    def __rmul__(self, a: float) -> "TestFunction":
        a = float(a)
        return TestFunction(
            lambda x: a * self.f(x),
            lambda x: a * self.grad(x),
            lambda x: a * self.hess(x),
            abs(a) * self.bound,
            f"{a:g}*{self.name}",
        )


def _as_rational_vector(theta) -> np.ndarray:
    vec = np.atleast_1d(np.asarray(theta, dtype=object))
    # Fraction(str(v)) accepts ints, fractions and finite decimal floats
    return np.array([float(Fraction(str(v))) for v in vec], dtype=np.float64)


@dataclass(frozen=True)
class TrigFunction(TestFunction):
    """``cos(theta . x)`` or ``sin(theta . x)``; carries ``theta`` for shared evaluation."""

    theta: tuple = ()
    kind: str = "cos"


def _trig(theta: np.ndarray, kind: str) -> TestFunction:
    label = ",".join(f"{v:g}" for v in theta)
    if kind == "cos":
        def f(x):
            return np.cos(x @ theta)

        def grad(x):
            return -np.sin(x @ theta)[..., None] * theta

        def hess(x):
            return -np.cos(x @ theta)[..., None, None] * np.outer(theta, theta)
    else:
        def f(x):
            return np.sin(x @ theta)

        def grad(x):
            return np.cos(x @ theta)[..., None] * theta

        def hess(x):
            return -np.sin(x @ theta)[..., None, None] * np.outer(theta, theta)
    return TrigFunction(f, grad, hess, 1.0, f"{kind}({label}.x)", tuple(float(v) for v in theta), kind)


def trig_family(theta_set) -> list[TestFunction]:
    """``cos(theta . x)`` and ``sin(theta . x)`` for each rational ``theta``."""
    thetas = [_as_rational_vector(th) for th in theta_set]
    if not thetas:
        raise ValueError("theta set must be non-empty")
    out = []
    for th in thetas:
        out.append(_trig(th, "cos"))
        out.append(_trig(th, "sin"))
    return out


def check_derivatives(f: TestFunction, points: np.ndarray, h: float = 1e-4) -> float:
    """Largest relative error of ``grad``/``hess`` against central differences."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    m = points.shape[1]
    eye = np.eye(m) * h
    g_fd = np.stack([(f.f(points + e) - f.f(points - e)) / (2 * h) for e in eye], axis=-1)
    h_fd = np.stack([(f.grad(points + e) - f.grad(points - e)) / (2 * h) for e in eye], axis=-1)
    g, H = f.grad(points), f.hess(points)
    err_g = np.max(np.abs(g - g_fd)) / max(1.0, float(np.max(np.abs(g))))
    err_h = np.max(np.abs(H - h_fd)) / max(1.0, float(np.max(np.abs(H))))
    return float(max(err_g, err_h))


def generator_values(f: TestFunction, x, beta, sigma, w, masses, sabotage: bool = False):
    """``A f`` evaluated from coefficient arrays; leading axes broadcast.

    ``x``, ``beta``: ``(..., m)``; ``sigma``: ``(..., m, m)``; ``w``: ``(..., J, m)``.
    With ``sabotage`` the ``- grad f . w`` compensation inside the jump
    integral is dropped (a deliberately wrong generator, for power checks).
    """
    g = f.grad(x)
    out = np.einsum("...i,...i->...", beta, g)
    a = np.einsum("...ik,...jk->...ij", sigma, sigma)
    out = out + 0.5 * np.einsum("...ij,...ij->...", a, f.hess(x))
    if len(masses):
        fx = f.f(x)
        for j, mass in enumerate(masses):
            wj = w[..., j, :]
            term = f.f(x + wj) - fx
            if not sabotage:
                term = term - np.einsum("...i,...i->...", g, wj)
            out = out + mass * term
    return out


def _canonical(theta: tuple):
    for v in theta:
        if v != 0:
            return (theta, 1.0) if v > 0 else (tuple(-x for x in theta), -1.0)
    return theta, 1.0


def _trig_block(fns, values, beta, sigma, w, masses, sabotage):
    """Values and generator images of trig functions sharing their phases.

    ``cos`` and ``sin`` of ``theta`` and ``-theta`` all reuse one set of
    ``cos``/``sin`` arrays; the angle-addition formula handles the jumps.
    """
    out = {}
    groups = {}
    for i, f in fns:
        key, sign = _canonical(f.theta)
        groups.setdefault(key, []).append((i, f, sign))
    for key, members in groups.items():
        theta = np.asarray(key)
        p = values @ theta
        C, S = np.cos(p), np.sin(p)
        Cx, Sx = C[:, :-1], S[:, :-1]
        b_t = beta @ theta
        st = np.einsum("ckij,i->ckj", sigma, theta)
        q = (st * st).sum(-1)
        jumps = []
        for j in range(len(masses)):
            a = w[:, :, j, :] @ theta
            if a.size and a.min() == a.max():
                a0 = float(a.flat[0])
                jumps.append((masses[j], a0, math.cos(a0), math.sin(a0)))
            else:
                jumps.append((masses[j], a, np.cos(a), np.sin(a)))
        gen_cos = -Sx * b_t - 0.5 * q * Cx
        gen_sin = Cx * b_t - 0.5 * q * Sx
        for mass, a, ca, sa in jumps:
            jc = Cx * ca - Sx * sa - Cx
            js = Sx * ca + Cx * sa - Sx
            if not sabotage:
                jc = jc + Sx * a
                js = js - Cx * a
            gen_cos = gen_cos + mass * jc
            gen_sin = gen_sin + mass * js
        for i, f, sign in members:
            if f.kind == "cos":
                out[i] = (C, gen_cos)
            else:
                out[i] = (sign * S, sign * gen_sin)
    return out


def _values_and_generator(functions, values, beta, sigma, w, masses, sabotage):
    """``f`` at every node and ``A f`` at every left node, per function."""
    trig = [(i, f) for i, f in enumerate(functions) if isinstance(f, TrigFunction)]
    out = _trig_block(trig, values, beta, sigma, w, masses, sabotage) if trig else {}
    x = values[:, :-1]
    for i, f in enumerate(functions):
        if i not in out:
            out[i] = (f.f(values), generator_values(f, x, beta, sigma, w, masses, sabotage))
    return [out[i] for i in range(len(functions))]


def apply_generator(coeffs: CoefficientSet, F: JumpMeasure, f: TestFunction, t: float,
                    path: CadlagPath, sabotage: bool = False) -> float:
    """``A_t f`` along ``path`` at grid time ``t``."""
    path.grid.index(t)
    h = history_of(path, t)
    x = h.current
    if abs(float(f.f(x)[0])) > f.bound * (1 + 1e-12):
        raise UnboundedFunctionError(f"|{f.name}(x)| exceeds its bound {f.bound} at x={x[0]}")
    beta, sigma, w = coefficient_arrays(coeffs, F, h)
    return float(generator_values(f, x, beta, sigma, w, F.masses, sabotage)[0])


def _identity_clock(t):
    return np.asarray(t, dtype=np.float64)


@dataclass(frozen=True)
class ProcessFunctional:
    """A pair ``(Phi, A(Phi))`` of non-anticipative functionals plus a clock ``V``.

    ``phi`` and ``a_phi`` take a :class:`History` and return one value per
    path; ``clock`` maps an array of times to ``V`` (non-decreasing).
    """

    phi: Callable
    a_phi: Callable
    clock: Callable = _identity_clock
    bound: float = math.inf
    name: str = "Phi"

    @classmethod
    def from_test_function(cls, f: TestFunction, coeffs: CoefficientSet, F: JumpMeasure,
                           sabotage: bool = False) -> "ProcessFunctional":
        def phi(h: History):
            return f.f(h.current)

        def a_phi(h: History):
            beta, sigma, w = coefficient_arrays(coeffs, F, h)
            return generator_values(f, h.current, beta, sigma, w, F.masses, sabotage)

        return cls(phi, a_phi, bound=f.bound, name=f.name)

    def at(self, t: float, path: CadlagPath) -> float:
        return float(np.asarray(self.phi(history_of(path, t)))[0])

    def generator_at(self, t: float, path: CadlagPath) -> float:
        return float(np.asarray(self.a_phi(history_of(path, t)))[0])


def time_functional() -> ProcessFunctional:
    """``Phi_t = t`` with ``A(Phi) = 1`` against the identity clock."""
    return ProcessFunctional(
        phi=lambda h: np.full(h.batch, h.t),
        a_phi=lambda h: np.ones(h.batch),
        name="t",
    )


def functional_along(phi: ProcessFunctional, values: np.ndarray, grid: TimeGrid,
                     k_from: int, k_to: int):
    """``Phi`` and ``A(Phi)`` at nodes ``k_from..k_to`` for a stack of paths.

    Returns two arrays of shape ``(n, k_to - k_from + 1)``.
    """
    values = np.asarray(values)
    cmax = np.maximum.accumulate(values[:, : k_to + 1], axis=1)
    cmin = np.minimum.accumulate(values[:, : k_to + 1], axis=1)
    n = values.shape[0]
    ph = np.empty((n, k_to - k_from + 1))
    aph = np.empty_like(ph)
    for i, k in enumerate(range(k_from, k_to + 1)):
        h = History(float(grid.times[k]), k, values[:, : k + 1], cmax[:, k], cmin[:, k])
        ph[:, i] = np.broadcast_to(phi.phi(h), (n,))
        aph[:, i] = np.broadcast_to(phi.a_phi(h), (n,))
    return ph, aph


def maf_increments(phi: ProcessFunctional, values: np.ndarray, grid: TimeGrid,
                   t: float, u: float) -> np.ndarray:
    """``Phi_u - Phi_t - sum_k A(Phi)_{t_k} (V_{t_{k+1}} - V_{t_k})`` for each path."""
    kt, ku = grid.index(t), grid.index(u)
    if kt > ku:
        raise ValueError(f"need t <= u, got t={t}, u={u}")
    ph, aph = functional_along(phi, values, grid, kt, ku)
    dV = np.diff(np.asarray(phi.clock(grid.times[kt: ku + 1]), dtype=np.float64))
    return ph[:, -1] - ph[:, 0] - aph[:, :-1] @ dV


def maf_from_generator(phi: ProcessFunctional, t: float, u: float, path: CadlagPath) -> float:
    """``M[Phi]_{t,u}`` along one path (left-endpoint quadrature against ``dV``)."""
    if t > u:
        raise ValueError(f"need t <= u, got t={t}, u={u}")
    return float(maf_increments(phi, path.values[None], path.grid, t, u)[0])


@dataclass
class MartingaleTestReport:
    """One row per (function, t, u, event) cell."""

    rows: list
    z_crit: float
    z_crit_adjusted: float
    n: int
    replicate_detection: float | None = None
    replicates: int = 0

    @property
    def passed(self) -> bool:
        return all(r["pass"] for r in self.rows)

    @property
    def pass_fraction(self) -> float:
        return sum(r["pass"] for r in self.rows) / len(self.rows) if self.rows else 1.0

    @property
    def max_abs_z(self) -> float:
        return max((abs(r["z"]) for r in self.rows), default=0.0)

    def failing(self) -> list:
        return [r for r in self.rows if not r["pass"]]

    def to_dict(self) -> dict:
        return {
            "suite": "mp",
            "n": self.n,
            "z_crit": self.z_crit,
            "z_crit_adjusted": self.z_crit_adjusted,
            "pass": self.passed,
            "pass_fraction": self.pass_fraction,
            "replicates": self.replicates,
            "replicate_detection": self.replicate_detection,
            "rows": self.rows,
        }


def _batches_with_records(ensemble, coeffs, F):
    engine = getattr(ensemble, "engine", None)
    if engine is not None and engine.coeffs is coeffs and engine.F is F:
        yield from ensemble.batches(record=True)
        return
    start = ensemble.start.start_index
    for b in ensemble.batches():
        b.beta, b.sigma, b.w = record_coefficients(coeffs, F, np.asarray(b.values), ensemble.grid, start)
        yield b


def verify_martingale_problem(
    ensemble,
    coeffs: CoefficientSet,
    F: JumpMeasure,
    functions,
    times,
    events=None,
    *,
    z_crit: float = 3.0,
    bonferroni: bool = True,
    sabotage: bool = False,
    bank_size: int = 8,
    bank_scale: float = 0.5,
    bank_seed: int = 0,
    replicates: int = 0,
) -> MartingaleTestReport:
    """Test ``E[(M_u - M_t) 1_G] = 0`` for ``M = f(X) - sum A_r f dr``.

    ``times`` is a list of ``(t, u)`` pairs, or a flat list of times from which
    all pairs ``t < u`` are formed. ``events`` maps each ``t`` to a list of
    events measurable at ``t``; by default a bank of ``bank_size`` events
    (whole space plus cylinders) is generated per ``t``. Each cell is a
    z-test; with ``bonferroni`` the critical value keeps the family-wise
    level of a single ``z_crit`` test. With ``replicates > 1`` the paths are
    also split into that many disjoint sub-ensembles and the fraction of
    sub-ensembles whose own test fails is reported.
    """
    grid = ensemble.grid
    s = ensemble.start.s
    times = list(times)
    if times and np.ndim(times[0]) == 0:
        flat = sorted(float(t) for t in times)
        pairs = [(a, b) for i, a in enumerate(flat) for b in flat[i + 1:]]
    else:
        pairs = [(float(a), float(b)) for a, b in times]
    for t, u in pairs:
        if t > u:
            raise ValueError(f"time pair ({t}, {u}) has t > u")
        if t < s - 1e-12:
            raise ValueError(f"t={t} precedes the start time {s}")
        grid.index(t)
        grid.index(u)
    t_values = sorted({t for t, _ in pairs})
    if events is None:
        center = ensemble.start.eta.values[ensemble.start.start_index]
        events = {
            t: event_bank(t, bank_size, grid, center, bank_scale, bank_seed, s=s) for t in t_values
        }
    elif not isinstance(events, dict):
        events = {t: list(events) for t in t_values}
    for t in t_values:
        for ev in events[t]:
            check_measurable_before(ev, t)

    functions = list(functions)
    cells = [
        (fi, t, u, ei)
        for fi in range(len(functions))
        for (t, u) in pairs
        for ei in range(len(events[t]))
    ]
    node_of = {t: grid.index(t) for t in {x for p in pairs for x in p}}
    dts = grid.steps
    k0 = ensemble.start.start_index
    total = Moments()
    reps = [Moments() for _ in range(replicates)] if replicates > 1 else []
    rep_size = math.ceil(ensemble.n / replicates) if reps else 0
    checked = False
    for b in _batches_with_records(ensemble, coeffs, F):
        values = np.asarray(b.values)
        if not checked:
            for t in t_values:
                for ev in events[t]:
                    check_measurable_before(ev, t, values[:64], grid, bank_seed)
            checked = True
        M = {}
        evaluated = _values_and_generator(functions, values, b.beta, b.sigma, b.w, F.masses, sabotage)
        for fi, (fx_all, af) in enumerate(evaluated):
            if np.any(np.abs(fx_all) > functions[fi].bound * (1 + 1e-12)):
                raise UnboundedFunctionError(f"{functions[fi].name} exceeds its bound on the ensemble")
            af[:, :k0] = 0.0
            integral = np.zeros(fx_all.shape)
            np.cumsum(af * dts, axis=1, out=integral[:, 1:])
            for t, k in node_of.items():
                M[fi, t] = fx_all[:, k] - integral[:, k]
        ind = {(t, ei): ev.indicator(values, grid) for t in t_values for ei, ev in enumerate(events[t])}
        sample = np.empty((values.shape[0], len(cells)))
        for c, (fi, t, u, ei) in enumerate(cells):
            sample[:, c] = (M[fi, u] - M[fi, t]) * ind[t, ei]
        total.add(sample)
        if reps:
            idx = b.offset + np.arange(values.shape[0])
            grp = idx // rep_size
            for g in np.unique(grp):
                reps[g].add(sample[grp == g])

    crit = bonferroni_z(z_crit, len(cells)) if bonferroni else float(z_crit)
    z = z_score(total.mean, total.se)
    rows = []
    for c, (fi, t, u, ei) in enumerate(cells):
        ev = events[t][ei]
        rows.append({
            "test_id": f"mp/{functions[fi].name}/{t:g}-{u:g}/{ei}",
            "f": functions[fi].name,
            "t": t,
            "u": u,
            "event": ev.name,
            "estimate": float(total.mean[c]),
            "stderr": float(total.se[c]),
            "z": float(z[c]),
            "pass": bool(abs(z[c]) <= crit),
        })
    detection = None
    if reps:
        fails = [bool(np.any(np.abs(z_score(r.mean, r.se)) > crit)) for r in reps]
        detection = sum(fails) / len(fails)
    return MartingaleTestReport(rows, float(z_crit), crit, total.n, detection, len(reps))


@dataclass
class WeakGeneratorReport:
    t: float
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float
    discrepancy: float
    stderr: float
    z: float
    passed: bool
    n: int

    def to_dict(self) -> dict:
        return {
            "test_id": f"generator/t={self.t:g}",
            "t": self.t,
            "lhs": self.lhs,
            "lhs_stderr": self.lhs_stderr,
            "rhs": self.rhs,
            "rhs_stderr": self.rhs_stderr,
            "estimate": self.discrepancy,
            "stderr": self.stderr,
            "z": self.z,
            "pass": self.passed,
            "n": self.n,
        }


def verify_weak_generator(
    engine: EngineConfig,
    phi: ProcessFunctional,
    init: InitialCondition,
    t: float,
    n_paths: int,
    tolerance: float = 1e-12,
    *,
    seed: int = 0,
    z_crit: float = 3.0,
) -> WeakGeneratorReport:
    """Compare ``E^{s,eta}[Phi_t]`` with ``Phi_s(eta) + sum_k E^{s,eta}[A(Phi)_{r_k}] dV_k``.

    Both sides come from one ensemble; ``stderr`` is the standard error of
    the per-path difference, which accounts for the correlation between the
    two sides. Passes when ``|discrepancy| <= z_crit * stderr + tolerance``.
    """
    if t < init.s - 1e-12:
        raise ValueError(f"t={t} precedes the start time {init.s}")
    sub = engine.truncated(t)
    start = sub.restrict(init)
    grid = sub.grid
    ks, kt = start.start_index, grid.index(t)
    phi_s = float(np.asarray(phi.phi(history_of(start.eta, start.s)))[0])
    dV = np.diff(np.asarray(phi.clock(grid.times[ks: kt + 1]), dtype=np.float64))
    lhs, rhs, diff = Moments(), Moments(), Moments()
    for b in sub.ensemble(start, n_paths, seed).batches():
        ph, aph = functional_along(phi, b.values, grid, ks, kt)
        if np.any(np.abs(ph) > phi.bound * (1 + 1e-12)):
            raise UnboundedFunctionError(f"{phi.name} exceeds its bound {phi.bound}")
        r = phi_s + aph[:, :-1] @ dV
        lhs.add(ph[:, -1])
        rhs.add(r)
        diff.add(ph[:, -1] - r)
    disc = float(diff.mean)
    se = float(diff.se)
    z = float(z_score(disc, se))
    passed = abs(disc) <= z_crit * se + tolerance
    return WeakGeneratorReport(float(t), float(lhs.mean), float(lhs.se), float(rhs.mean),
                               float(rhs.se), disc, se, z, bool(passed), lhs.n)
