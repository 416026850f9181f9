"""Named coefficient families, as referenced from experiment configs.

All drifts except ``quadratic-drift`` are clipped to their declared bound so
that the bounded-coefficient hypotheses hold. The diffusion matrix is
constant in every preset and jumps are ``w(t, w, y) = jump_scale * y``.
"""

from __future__ import annotations

import math

import numpy as np

from .path_core import TimeGrid
from .sde_engine import Bounds, CoefficientSet, History, JumpMeasure

__all__ = ["PRESETS", "make_coefficients", "constant"]


def _vec(value, dim):
    return np.broadcast_to(np.asarray(value, dtype=np.float64), (dim,)).copy()


def _mat(value, dim):
    a = np.asarray(value, dtype=np.float64)
    if a.ndim == 0:
        return np.eye(dim) * float(a)
    if a.ndim == 1:
        return np.diag(_vec(a, dim))
    return a.reshape(dim, dim).copy()


def _jump_bound(scale: float, F: JumpMeasure | None) -> float:
    if F is None or F.n_atoms == 0:
        return 0.0 if scale == 0 else math.inf
    return abs(scale) * float(np.max(np.linalg.norm(F.points, axis=1)))


def _common(dim, sigma, jump_scale, F):
    sig = _mat(sigma, dim)
    scale = float(jump_scale)

    def sigma_fn(h: History):
        return sig

    def w_fn(h: History, y):
        return scale * y

    return sig, sigma_fn, w_fn, _jump_bound(scale, F)


def constant(dim=1, beta=0.0, sigma=0.0, jump_scale=1.0, F=None) -> CoefficientSet:
    """Constant drift and diffusion, ``w = jump_scale * y``."""
    b = _vec(beta, dim)
    sig, sigma_fn, w_fn, wb = _common(dim, sigma, jump_scale, F)
    return CoefficientSet(
        dim=dim,
        beta=lambda h: b,
        sigma=sigma_fn,
        w=w_fn,
        bounds=Bounds(float(np.linalg.norm(b)), float(np.linalg.norm(sig)), wb),
        name="constant",
        params={"beta": b.tolist(), "sigma": sig.tolist(), "jump_scale": float(jump_scale)},
    )


def markov(dim=1, kappa=1.0, mean=0.0, sigma=0.0, jump_scale=1.0, drift_bound=1.0, F=None):
    """Clipped mean reversion ``beta = clip(kappa * (mean - x_t))``."""
    mu = _vec(mean, dim)
    sig, sigma_fn, w_fn, wb = _common(dim, sigma, jump_scale, F)
    cap = float(drift_bound) / math.sqrt(dim)

    def beta(h: History):
        return np.clip(kappa * (mu - h.current), -cap, cap)

    return CoefficientSet(
        dim, beta, sigma_fn, w_fn, Bounds(float(drift_bound), float(np.linalg.norm(sig)), wb),
        name="markov",
        params={"kappa": kappa, "mean": mu.tolist(), "sigma": sig.tolist(),
                "jump_scale": float(jump_scale), "drift_bound": float(drift_bound)},
    )


def running_max(dim=1, kappa=0.5, sigma=0.0, jump_scale=1.0, drift_bound=1.0, F=None):
    """``beta = clip(kappa * sup_{r<=t} x_r)``, coordinatewise."""
    sig, sigma_fn, w_fn, wb = _common(dim, sigma, jump_scale, F)
    cap = float(drift_bound) / math.sqrt(dim)

    def beta(h: History):
        return np.clip(kappa * h.running_max, -cap, cap)

    return CoefficientSet(
        dim, beta, sigma_fn, w_fn, Bounds(float(drift_bound), float(np.linalg.norm(sig)), wb),
        name="running-max",
        params={"kappa": kappa, "sigma": sig.tolist(), "jump_scale": float(jump_scale),
                "drift_bound": float(drift_bound)},
    )


def moving_average(dim=1, kappa=1.0, window=0.25, sigma=0.0, jump_scale=1.0,
                   drift_bound=1.0, F=None, grid: TimeGrid | None = None):
    """Pull towards the trailing average over ``window`` time units."""
    sig, sigma_fn, w_fn, wb = _common(dim, sigma, jump_scale, F)
    cap = float(drift_bound) / math.sqrt(dim)
    mesh = grid.mesh if grid is not None else None

    def beta(h: History):
        nodes = h.k + 1
        if mesh is not None:
            nodes = min(nodes, max(1, int(round(window / mesh)) + 1))
        avg = h.values[:, -nodes:].mean(axis=1)
        return np.clip(kappa * (avg - h.current), -cap, cap)

    return CoefficientSet(
        dim, beta, sigma_fn, w_fn, Bounds(float(drift_bound), float(np.linalg.norm(sig)), wb),
        name="moving-average",
        params={"kappa": kappa, "window": window, "sigma": sig.tolist(),
                "jump_scale": float(jump_scale), "drift_bound": float(drift_bound)},
    )


def delay(dim=1, kappa=-1.0, lag=0.1, sigma=0.0, jump_scale=1.0, drift_bound=1.0,
          F=None, grid: TimeGrid | None = None):
    """``beta = clip(kappa * x_{t - lag})`` with ``x_{t-lag} = x_0`` before ``lag``."""
    sig, sigma_fn, w_fn, wb = _common(dim, sigma, jump_scale, F)
    cap = float(drift_bound) / math.sqrt(dim)
    lag_nodes = None if grid is None else int(round(lag / grid.mesh))

    def beta(h: History):
        if lag_nodes is not None:
            past = h.values[:, max(h.k - lag_nodes, 0)]
        else:
            past = h.values[:, 0] if h.t < lag else h.values[:, -1]
        return np.clip(kappa * past, -cap, cap)

    return CoefficientSet(
        dim, beta, sigma_fn, w_fn, Bounds(float(drift_bound), float(np.linalg.norm(sig)), wb),
        name="delay",
        params={"kappa": kappa, "lag": lag, "sigma": sig.tolist(),
                "jump_scale": float(jump_scale), "drift_bound": float(drift_bound)},
    )


def quadratic_drift(dim=1, kappa=4.0, sigma=0.0, jump_scale=1.0, F=None):
    """Unbounded drift ``kappa * (1 + |x|^2)``; explodes in finite time."""
    sig, sigma_fn, w_fn, wb = _common(dim, sigma, jump_scale, F)

    def beta(h: History):
        x = h.current
        return kappa * (1.0 + np.sum(x * x, axis=-1, keepdims=True)) * np.ones(dim)

    return CoefficientSet(
        dim, beta, sigma_fn, w_fn, Bounds(math.inf, float(np.linalg.norm(sig)), wb),
        continuous_in_path=True,
        name="quadratic-drift",
        params={"kappa": kappa, "sigma": sig.tolist(), "jump_scale": float(jump_scale)},
    )


PRESETS = {
    "constant": constant,
    "markov": markov,
    "running-max": running_max,
    "moving-average": moving_average,
    "delay": delay,
    "quadratic-drift": quadratic_drift,
}


def make_coefficients(name: str, dim: int, params: dict, F: JumpMeasure | None = None,
                      grid: TimeGrid | None = None) -> CoefficientSet:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown coefficient preset {name!r}; choose from {sorted(PRESETS)}") from None
    kwargs = dict(params)
    if name in ("moving-average", "delay"):
        kwargs["grid"] = grid
    return factory(dim=dim, F=F, **kwargs)
