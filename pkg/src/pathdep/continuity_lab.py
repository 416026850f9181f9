"""Empirical checks that laws started from converging ``(s_n, eta_n)`` converge.

Two diagnostics: expectations of bounded continuous path functionals
compared level by level against the target law (with common random
numbers), and the two-condition tightness search over all levels.
Neither certifies weak convergence; reports say whether the samples are
consistent with it at a stated tolerance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats as sps

from .path_core import InitialCondition
from .projectors import PathRandomVariable
from .sde_engine import EngineConfig
from .skorokhod import TightnessVerdict, skorokhod_distance, tightness_check
from .stats import Moments, z_score

__all__ = [
    "ConvergenceScenario",
    "ConvergenceReport",
    "default_bank",
    "levy_characteristic",
    "levy_cos_mean",
    "run_convergence_diagnostic",
    "run_tightness_diagnostic",
]

log = logging.getLogger(__name__)


def default_bank(T: float, thetas=(1.0, 2.0), clamp: float = 1.0, coord: int = 0) -> list:
    """``cos(theta X_T)``, ``sin(theta X_T)`` and a clamped running maximum."""
    bank = []
    for th in thetas:
        bank.append(PathRandomVariable(lambda v, g, th=th: np.cos(th * v[:, g.snap(T), coord]),
                                       1.0, T, f"cos({th:g} X_T)"))
        bank.append(PathRandomVariable(lambda v, g, th=th: np.sin(th * v[:, g.snap(T), coord]),
                                       1.0, T, f"sin({th:g} X_T)"))
    bank.append(PathRandomVariable(
        lambda v, g: np.clip(v[:, : g.snap(T) + 1, coord].max(axis=1), -clamp, clamp),
        clamp, T, f"clip(max X, {clamp:g})"))
    return bank


def levy_characteristic(x0, theta, beta, sigma, jumps, masses, tau: float) -> complex:
    """``E exp(i theta . X_tau)`` for ``X = x0 + beta t + sigma W + compensated jumps``.

    ``jumps`` are the jump sizes ``w_j`` (``(J, m)``) with intensities ``masses``.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    theta = np.broadcast_to(np.asarray(theta, dtype=np.float64), x0.shape)
    beta = np.broadcast_to(np.asarray(beta, dtype=np.float64), x0.shape)
    sig = np.asarray(sigma, dtype=np.float64)
    sig = np.eye(x0.size) * sig if sig.ndim == 0 else sig.reshape(x0.size, x0.size)
    jumps = np.asarray(jumps, dtype=np.float64).reshape(len(masses), x0.size) if len(masses) else np.zeros((0, x0.size))
    u = jumps @ theta
    expo = (1j * theta @ (x0 + beta * tau)
            - 0.5 * tau * theta @ sig @ sig.T @ theta
            + tau * np.sum(np.asarray(masses) * (np.exp(1j * u) - 1 - 1j * u)))
    return complex(np.exp(expo))


def levy_cos_mean(x0, theta, beta, sigma, jumps, masses, tau: float) -> float:
    """``E cos(theta . X_tau)`` under the same constant-coefficient model."""
    return levy_characteristic(x0, theta, beta, sigma, jumps, masses, tau).real


def _distance(a: InitialCondition, b: InitialCondition) -> float:
    return max(abs(a.s - b.s), skorokhod_distance(a.frozen_path, b.frozen_path))


@dataclass
class ConvergenceScenario:
    """Target ``(s, eta)``, approximants ``(s_n, eta_n)`` and a bank of bounded functionals."""

    target: InitialCondition
    approximants: list
    bank: list = field(default_factory=list)
    labels: list | None = None

    def __post_init__(self):
        self.approximants = list(self.approximants)
        if not self.approximants:
            raise ValueError("a scenario needs at least one approximant")
        if self.labels is None:
            self.labels = list(range(1, len(self.approximants) + 1))
        if len(self.labels) != len(self.approximants):
            raise ValueError("labels and approximants differ in length")
        d = self.distances()
        if np.any(np.diff(d) > 1e-12):
            raise ValueError(f"approximant distances must be non-increasing, got {d.tolist()}")

    def distances(self) -> np.ndarray:
        return np.array([_distance(a, self.target) for a in self.approximants])


@dataclass
class ConvergenceReport:
    rows: list
    trend: dict
    tolerance: float
    z_crit: float

    @property
    def passed(self) -> bool:
        return all(r["pass"] for r in self.rows if r["pass"] is not None)

    @property
    def statement(self) -> str:
        verdict = "consistent" if self.passed else "not consistent"
        return f"{verdict} with convergence at tolerance {self.tolerance:g}"

    def to_dict(self) -> dict:
        return {"suite": "continuity", "pass": self.passed, "statement": self.statement,
                "tolerance": self.tolerance, "z_crit": self.z_crit,
                "trend": self.trend, "rows": self.rows}


def _estimates(engine, init, bank, n_paths, seed):
    ens = engine.ensemble(engine.restrict(init), n_paths, seed)
    for b in ens.batches():
        yield np.stack([g.evaluate(b.values, engine.grid) for g in bank])


def run_convergence_diagnostic(
    scenario: ConvergenceScenario,
    engine: EngineConfig,
    n_paths: int,
    seed: int,
    *,
    expected: Callable | None = None,
    z_crit: float = 3.0,
    tolerance: float = 0.05,
) -> ConvergenceReport:
    """Paired differences ``E^{s_n,eta_n}[g] - E^{s,eta}[g]`` for every level and ``g``.

    Every level reuses ``seed``, so path ``i`` sees the same noise at each
    absolute time step and the differences are common-random-number
    estimates. ``expected(init_n, target, g)`` may return the exact
    difference (or ``None``); such rows pass iff within ``z_crit`` standard
    errors of it. Without an exact value only the last level is judged, and
    it passes iff ``|difference| <= z_crit * stderr + tolerance``.
    """
    if not scenario.bank:
        raise ValueError("empty test bank")
    if not (engine.coeffs.bounds.finite and engine.coeffs.continuous_in_path):
        log.warning("coefficients are not declared bounded and continuous in the path")
    bank = scenario.bank
    n_levels = len(scenario.approximants)
    target = [Moments() for _ in bank]
    diffs = [[Moments() for _ in bank] for _ in range(n_levels)]
    level_est = [[Moments() for _ in bank] for _ in range(n_levels)]
    # stream the target once, the levels alongside it, batch by batch
    gens = [_estimates(engine, a, bank, n_paths, seed) for a in scenario.approximants]
    for tvals in _estimates(engine, scenario.target, bank, n_paths, seed):
        for j in range(len(bank)):
            target[j].add(tvals[j])
        for lvl, gen in enumerate(gens):
            lvals = next(gen)
            for j in range(len(bank)):
                level_est[lvl][j].add(lvals[j])
                diffs[lvl][j].add(lvals[j] - tvals[j])
    dist = scenario.distances()
    rows, trend = [], {}
    for j, g in enumerate(bank):
        absd = []
        for lvl, init in enumerate(scenario.approximants):
            d, se = float(diffs[lvl][j].mean), float(diffs[lvl][j].se)
            absd.append(abs(d))
            exact = expected(init, scenario.target, g) if expected is not None else None
            if exact is not None:
                zz = float(z_score(d - exact, se))
                ok = bool(abs(d - exact) <= z_crit * se + 1e-12)
            elif lvl == n_levels - 1:
                zz = float(z_score(d, se))
                ok = bool(abs(d) <= z_crit * se + tolerance)
            else:
                zz, ok = float(z_score(d, se)), None
            rows.append({
                "test_id": f"continuity/{g.name}/n={scenario.labels[lvl]}",
                "g": g.name,
                "level": scenario.labels[lvl],
                "distance": float(dist[lvl]),
                "level_estimate": float(level_est[lvl][j].mean),
                "target_estimate": float(target[j].mean),
                "estimate": d,
                "stderr": se,
                "expected": None if exact is None else float(exact),
                "z": zz,
                "pass": ok,
            })
        # Kendall tau of |difference| against level order; -1 = steadily shrinking
        if n_levels > 1 and np.ptp(absd) > 0:
            tau = float(sps.kendalltau(np.arange(n_levels), absd).statistic)
        else:
            tau = 0.0
        trend[g.name] = tau
    return ConvergenceReport(rows, trend, float(tolerance), float(z_crit))


def run_tightness_diagnostic(
    scenario: ConvergenceScenario,
    engine: EngineConfig,
    n_paths: int,
    N: float,
    epsilon: float,
    alphas,
    *,
    seed: int = 0,
    K_cap: float = 2.0**10,
) -> TightnessVerdict:
    """Simulate every ``P^{s_n, eta_n}`` and run the tightness search over the family."""
    if not engine.coeffs.bounds.finite:
        log.warning("coefficients are not declared bounded; tightness is not guaranteed")
    sub = engine.truncated(float(engine.grid.times[engine.grid.snap(min(N, engine.grid.horizon))]))
    ensembles = []
    for lvl, init in enumerate(scenario.approximants):
        ens = sub.simulate(sub.restrict(init), n_paths, seed, stream=lvl + 1)
        ensembles.append(ens)
    return tightness_check(ensembles, N, epsilon, alphas, K_cap=K_cap)
