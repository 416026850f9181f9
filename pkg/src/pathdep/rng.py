"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, path index, step, slot)``,
obtained by hashing the counter with the SplitMix64 finalizer. A path's
noise therefore never depends on how paths are batched or on how many
workers run, and a whole batch of independent per-path streams is generated
with a handful of vectorized numpy operations.
"""

from __future__ import annotations

import numpy as np
from scipy import special, stats

__all__ = [
    "derive_seed",
    "path_keys",
    "uniforms",
    "normals_and_counts",
    "PoissonTable",
]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_M53 = 2.0**-53
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    # SplitMix64 finalizer; uint64 arithmetic wraps mod 2**64.
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _mix_int(x: int) -> int:
    with np.errstate(over="ignore"):
        return int(_mix(np.array([x & _MASK64], dtype=np.uint64))[0])


def derive_seed(seed: int, *labels: int) -> int:
    """Derive a child seed from ``seed`` and a sequence of integer labels.

    Used to give nested simulations (restarts, scenario levels) their own
    stream families while keeping everything a function of one root seed.
    """
    h = _mix_int(seed + 0x243F6A8885A308D3)
    for label in labels:
        h = _mix_int(h ^ _mix_int(int(label) + 0x13198A2E03707344))
    return h


def path_keys(seed: int, indices) -> np.ndarray:
    """Per-path stream keys for the given path indices."""
    idx = np.asarray(indices, dtype=np.uint64)
    base = np.uint64(derive_seed(seed))
    with np.errstate(over="ignore"):
        return _mix(base ^ _mix(idx * _GOLDEN + _GOLDEN))


def uniforms(keys: np.ndarray, step: int, n_slots: int) -> np.ndarray:
    """Uniforms in the open interval (0, 1), shape ``(len(keys), n_slots)``."""
    counter = np.uint64(step) * np.uint64(n_slots) + np.arange(n_slots, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix(keys[:, None] + (counter[None, :] + np.uint64(1)) * _GOLDEN)
    return ((z >> _S11).astype(np.float64) + 0.5) * _TWO_M53


class PoissonTable:
    """Inverse-CDF sampler for a fixed Poisson rate."""

    def __init__(self, rate: float):
        if rate < 0 or not np.isfinite(rate):
            raise ValueError(f"Poisson rate must be finite and >= 0, got {rate}")
        self.rate = float(rate)
        kmax = int(rate + 20.0 * np.sqrt(rate) + 40)
        self.cdf = stats.poisson.cdf(np.arange(kmax + 1), rate)

    def sample(self, u: np.ndarray) -> np.ndarray:
        if self.rate == 0.0:
            return np.zeros(u.shape, dtype=np.int64)
        k = np.searchsorted(self.cdf, u, side="left")
        return np.minimum(k, len(self.cdf) - 1)


def normals_and_counts(keys: np.ndarray, step: int, dim: int, tables: list[PoissonTable]):
    """Draw the step-``step`` noise of every path in a batch.

    Returns standard normals of shape ``(n, dim)`` and Poisson counts of shape
    ``(n, len(tables))``.
    """
    u = uniforms(keys, step, dim + len(tables))
    xi = special.ndtri(u[:, :dim])
    if tables:
        counts = np.stack([tab.sample(u[:, dim + j]) for j, tab in enumerate(tables)], axis=1)
    else:
        counts = np.zeros((len(keys), 0), dtype=np.int64)
    return xi, counts
