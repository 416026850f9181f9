"""Moduli of continuity for step paths, tightness search and a J1 proximity score.

Conventions for a path with node values ``x_0..x_n``:

* the value on ``[t_k, t_{k+1})`` is ``x_k`` and ``x_n`` is the value at the
  last node;
* in ``W'_N`` every interval ``[t_{i-1}, t_i)`` is half-open except the last
  one, which is closed at ``N`` (so ``x(N)`` is part of it).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .path_core import NODE_TOL, CadlagPath, GridError, TimeGrid
from .stats import binomial_se

__all__ = [
    "ModulusReport",
    "TightnessVerdict",
    "InfeasibleSubdivisionError",
    "oscillation",
    "modulus_w",
    "modulus_wprime",
    "wprime_values",
    "w_values",
    "tightness_check",
    "skorokhod_distance",
]


class InfeasibleSubdivisionError(ValueError):
    """No subdivision of ``[0, N]`` has all gaps ``>= theta``."""


def _norm(d: np.ndarray) -> np.ndarray:
    """Euclidean norm over the last axis without underflow for tiny entries."""
    if d.shape[-1] == 1:
        return np.abs(d[..., 0])
    return np.hypot.reduce(d, axis=-1)


def _diameter(points: np.ndarray) -> float:
    if points.shape[0] <= 1:
        return 0.0
    if points.shape[1] == 1:
        return float(points.max() - points.min())
    diff = points[:, None, :] - points[None, :, :]
    return float(_norm(diff).max())


def oscillation(path: CadlagPath, interval, closed: bool = False) -> float:
    """``sup_{s,t in [a,b)} |w(t) - w(s)|`` (``[a, b]`` when ``closed``)."""
    a, b = (float(v) for v in interval)
    if not a < b:
        raise ValueError(f"empty or inverted interval [{a}, {b})")
    grid = path.grid
    lo = grid.snap(a)
    if closed:
        hi = grid.snap(b)
    else:
        if b > grid.horizon + NODE_TOL * max(1.0, grid.horizon):
            raise GridError(f"time {b} outside [0, {grid.horizon}]")
        tol = NODE_TOL * max(1.0, grid.horizon)
        hi = int(np.searchsorted(grid.times, b - tol, side="left")) - 1
    return _diameter(path.values[lo: hi + 1])


def _n_index(grid: TimeGrid, N: float) -> int:
    if N <= 0:
        raise ValueError("N must be > 0")
    return grid.index(N)


def w_values(values: np.ndarray, grid: TimeGrid, N: float, theta: float) -> np.ndarray:
    """``W_N(., theta)`` for a stack of paths ``(P, nodes, m)``."""
    if theta <= 0:
        raise ValueError("theta must be > 0")
    kN = _n_index(grid, N)
    x = np.asarray(values)[:, : kN + 1]
    t = grid.times[: kN + 1]
    tol = NODE_TOL * max(1.0, grid.horizon)
    out = np.zeros(x.shape[0])
    # pair (i, i+d) is reachable iff t_{i+d} - t_{i+1} < theta
    for d in range(1, kN + 1):
        allowed = (t[d:] - t[1: kN + 2 - d]) < theta - tol if d > 1 else np.ones(kN, bool)
        if not allowed.any():
            break
        with np.errstate(over="ignore", invalid="ignore"):
            dist = _norm(x[:, d:] - x[:, :-d])[:, allowed]
        if dist.size:
            out = np.maximum(out, dist.max(axis=1))
    return out


def modulus_w(path: CadlagPath, N: float, theta: float) -> float:
    """``W_N(w, theta)``: largest increment over times at most ``theta`` apart in ``[0, N]``."""
    return float(w_values(path.values[None], path.grid, N, theta)[0])


def _diameter_table(x: np.ndarray) -> np.ndarray:
    """``D[p, i, j]`` = diameter of nodes ``i..j`` of path ``p`` (zero for ``j < i``)."""
    P, n, _ = x.shape
    D = np.zeros((P, n, n))
    ar = np.arange(n)
    for d in range(1, n):
        i = ar[: n - d]
        j = i + d
        with np.errstate(over="ignore", invalid="ignore"):
            pair = _norm(x[:, j] - x[:, i])
        D[:, i, j] = np.maximum(np.maximum(D[:, i + 1, j], D[:, i, j - 1]), pair)
    return D


def _wprime_dp(D: np.ndarray, t: np.ndarray, theta: float, want_argmin: bool = False):
    P, n, _ = D.shape
    kN = n - 1
    tol = NODE_TOL * max(1.0, t[-1])
    best = np.full((P, n), np.inf)
    best[:, 0] = 0.0
    parent = np.full((P, n), -1, dtype=np.int64) if want_argmin else None
    for j in range(1, n):
        last = int(np.searchsorted(t, t[j] - theta + tol, side="right")) - 1
        if last < 0:
            continue
        # the final interval is closed at N; the others are [t_i, t_j)
        osc = D[:, : last + 1, j] if j == kN else D[:, : last + 1, j - 1]
        cand = np.maximum(best[:, : last + 1], osc)
        best[:, j] = cand.min(axis=1)
        if want_argmin:
            parent[:, j] = cand.argmin(axis=1)
    return best[:, kN], parent


def wprime_values(values: np.ndarray, grid: TimeGrid, N: float, thetas, chunk: int = 256) -> np.ndarray:
    """``W'_N(., theta)`` for a stack of paths and several thetas, shape ``(len(thetas), P)``."""
    kN = _n_index(grid, N)
    thetas = [float(th) for th in np.atleast_1d(thetas)]
    tol = NODE_TOL * max(1.0, grid.horizon)
    for th in thetas:
        if th <= 0:
            raise ValueError("theta must be > 0")
        if th > N + tol:
            raise InfeasibleSubdivisionError(f"theta={th} exceeds N={N}")
    x = np.asarray(values)[:, : kN + 1]
    t = grid.times[: kN + 1]
    out = np.empty((len(thetas), x.shape[0]))
    with np.errstate(invalid="ignore"):
        for lo in range(0, x.shape[0], chunk):
            D = _diameter_table(x[lo: lo + chunk])
            for a, th in enumerate(thetas):
                out[a, lo: lo + chunk], _ = _wprime_dp(D, t, th)
    return out


@dataclass
class ModulusReport:
    N: float
    theta: float
    w_value: float
    wprime_value: float
    subdivision: list[float]


def modulus_wprime(path: CadlagPath, N: float, theta: float) -> ModulusReport:
    """Exact ``W'_N`` over grid-node subdivisions, with an optimal subdivision."""
    grid = path.grid
    kN = _n_index(grid, N)
    if theta <= 0:
        raise ValueError("theta must be > 0")
    if theta > N + NODE_TOL * max(1.0, grid.horizon):
        raise InfeasibleSubdivisionError(f"theta={theta} exceeds N={N}")
    t = grid.times[: kN + 1]
    D = _diameter_table(path.values[None, : kN + 1])
    value, parent = _wprime_dp(D, t, theta, want_argmin=True)
    nodes = [kN]
    while nodes[-1] != 0:
        nodes.append(int(parent[0, nodes[-1]]))
    subdivision = [float(t[k]) for k in reversed(nodes)]
    return ModulusReport(
        N=float(N),
        theta=float(theta),
        w_value=modulus_w(path, N, theta),
        wprime_value=float(value[0]),
        subdivision=subdivision,
    )


@dataclass
class TightnessVerdict:
    K: float | None
    theta_per_alpha: dict
    passed: bool
    rows: list = field(default_factory=list)
    failing: list = field(default_factory=list)

    @property
    def pass_(self) -> bool:
        return self.passed

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "theta_per_alpha": {repr(float(a)): th for a, th in self.theta_per_alpha.items()},
            "pass": self.passed,
            "rows": self.rows,
            "failing": self.failing,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _as_values(ens):
    if hasattr(ens, "values") and hasattr(ens, "grid"):
        return np.asarray(ens.values), ens.grid
    values, grid = ens
    return np.asarray(values), grid


def tightness_check(
    ensembles,
    N: float,
    epsilon: float,
    alphas,
    *,
    K_cap: float = 2.0**10,
    theta_max: float = 1.0,
) -> TightnessVerdict:
    """Search ``K`` (doubling) and ``theta`` (halving) for the two tightness conditions.

    ``ensembles`` is a sequence of objects with ``values`` ``(n, nodes, m)`` and
    ``grid`` (or ``(values, grid)`` pairs). Condition 1 asks for a ``K`` with
    ``sup_n P_n(sup_{t<=N} |w(t)| > K) <= epsilon``; condition 2 asks, for every
    ``alpha``, for a ``theta`` with ``inf_n P_n(W'_N(w, theta) < alpha) >= 1 - epsilon``.
    Frequencies are point estimates; their binomial standard errors are reported.
    """
    ensembles = [_as_values(e) for e in ensembles]
    if not ensembles or any(v.shape[0] == 0 for v, _ in ensembles):
        raise ValueError("tightness_check needs non-empty ensembles")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    alphas = [float(a) for a in np.atleast_1d(alphas)]
    rows, failing = [], []

    sup_norms = []
    for values, grid in ensembles:
        kN = _n_index(grid, N)
        with np.errstate(invalid="ignore", over="ignore"):
            norms = _norm(values[:, : kN + 1])
        norms = np.where(np.isnan(norms), np.inf, norms)
        sup_norms.append(norms.max(axis=1))

    K_found = None
    K = 1.0
    while K <= K_cap:
        freqs = [float(np.mean(s > K)) for s in sup_norms]
        worst = int(np.argmax(freqs))
        ok = freqs[worst] <= epsilon
        rows.append({
            "condition": "compact_containment",
            "parameter": {"K": K},
            "frequency": freqs[worst],
            "stderr": float(binomial_se(freqs[worst], sup_norms[worst].size)),
            "pass": ok,
        })
        if ok:
            K_found = K
            break
        K *= 2.0
    if K_found is None:
        failing.append({"condition": "compact_containment",
                        "detail": f"no K <= {K_cap} keeps sup-norm exceedance <= {epsilon}"})

    mesh = max(g.mesh for _, g in ensembles)
    tol = NODE_TOL * max(1.0, N)
    thetas = []
    th = min(theta_max, N)
    while th >= mesh - tol:
        thetas.append(th)
        th /= 2.0
    wp = [wprime_values(v, g, N, thetas) for v, g in ensembles]
    theta_per_alpha = {}
    for alpha in alphas:
        found = None
        for a, th in enumerate(thetas):
            freqs = [float(np.mean(w[a] < alpha)) for w in wp]
            worst = int(np.argmin(freqs))
            ok = freqs[worst] >= 1.0 - epsilon
            rows.append({
                "condition": "cadlag_modulus",
                "parameter": {"alpha": alpha, "theta": th},
                "frequency": freqs[worst],
                "stderr": float(binomial_se(freqs[worst], wp[worst].shape[1])),
                "pass": ok,
            })
            if ok:
                found = th
                break
        theta_per_alpha[alpha] = found
        if found is None:
            failing.append({"condition": "cadlag_modulus",
                            "detail": f"alpha={alpha}: no theta >= mesh reaches 1 - epsilon"})

    passed = K_found is not None and all(v is not None for v in theta_per_alpha.values())
    return TightnessVerdict(K_found, theta_per_alpha, passed, rows, failing)


def skorokhod_distance(p: CadlagPath, q: CadlagPath, max_stretch: int = 64) -> float:
    """Upper bound on the J1 distance between two step paths on one grid.

    Minimizes ``max(sup |lambda(t) - t|, sup |p(lambda(t)) - q(t)|)`` over
    increasing piecewise-linear time changes whose breakpoints are grid nodes
    and that map each segment either onto one interval of ``p`` or one
    interval of ``q`` onto several (at most ``max_stretch``) of the other.
    The identity is among the candidates, so the result never exceeds the
    uniform distance. The move set is symmetric in ``p`` and ``q``.
    """
    if abs(p.horizon - q.horizon) > NODE_TOL * max(1.0, p.horizon):
        raise GridError("paths have different horizons")
    if p.grid != q.grid:
        raise GridError("skorokhod_distance needs both paths on one grid")
    t = p.grid.times
    n = len(t) - 1
    P, Q = p.values, q.values
    best = np.full((n + 1, n + 1), np.inf)
    best[0, 0] = 0.0
    L = max(1, min(max_stretch, n))
    disp = np.abs(t[:, None] - t[None, :])
    for i in range(n):
        row = best[i]
        live = np.nonzero(np.isfinite(row[:n]))[0]
        if live.size == 0:
            continue
        # one p-interval over b q-intervals: values p_i against q_j..q_{j+b-1}
        dq = _norm(Q[:n] - P[i])
        run = np.full(live.size, -np.inf)
        for b in range(1, L + 1):
            jj = live + b - 1
            ok = jj < n
            if not ok.any():
                break
            run = np.maximum(run, np.where(ok, dq[np.minimum(jj, n - 1)], np.inf))
            tgt = live + b
            m_ok = ok & (tgt <= n)
            cost = np.maximum(np.maximum(row[live], disp[i, live]), np.maximum(run, disp[i + 1, np.minimum(tgt, n)]))
            tj = tgt[m_ok]
            best[i + 1, tj] = np.minimum(best[i + 1, tj], cost[m_ok])
        # a p-intervals (a >= 2) over one q-interval: q_j against p_i..p_{i+a-1}
        run = _norm(P[i] - Q[live])
        for a in range(2, L + 1):
            if i + a > n:
                break
            run = np.maximum(run, _norm(P[i + a - 1] - Q[live]))
            tgt = live + 1
            m_ok = (tgt <= n) & (live < n)
            cost = np.maximum(np.maximum(row[live], disp[i, live]), np.maximum(run, disp[i + a, np.minimum(tgt, n)]))
            tj = tgt[m_ok]
            best[i + a, tj] = np.minimum(best[i + a, tj], cost[m_ok])
    end = float(_norm(P[n] - Q[n]))
    return max(float(best[n, n]), end)
