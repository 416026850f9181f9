"""Small Monte Carlo statistics helpers shared by the verification suites."""

from __future__ import annotations

import math

import numpy as np
from scipy import special

__all__ = ["Moments", "mean_se", "z_score", "bonferroni_z", "binomial_se"]


class Moments:
    """Streaming count/mean/M2 accumulator over the leading axis.

    Batches are merged with Chan's pairwise update in the order they are
    added, so results depend only on the batch sequence.
    """

    def __init__(self):
        self.n = 0
        self.mean = None
        self.m2 = None

    def add(self, x):
        x = np.asarray(x, dtype=np.float64)
        nb = x.shape[0]
        if nb == 0:
            return self
        mb = x.mean(axis=0)
        m2b = ((x - mb) ** 2).sum(axis=0)
        if self.n == 0:
            self.n, self.mean, self.m2 = nb, mb, m2b
            return self
        n = self.n + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * (nb / n)
        self.m2 = self.m2 + m2b + delta**2 * (self.n * nb / n)
        self.n = n
        return self

    @property
    def var(self):
        if self.n < 2:
            return np.zeros_like(self.mean)
        return self.m2 / (self.n - 1)

    @property
    def se(self):
        return np.sqrt(self.var / self.n)


def mean_se(x, axis=0):
    """Sample mean and its standard error ``std(ddof=1) / sqrt(n)``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[axis]
    mean = x.mean(axis=axis)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, x.std(axis=axis, ddof=1) / math.sqrt(n)


def z_score(estimate, se):
    """``estimate / se`` with the convention 0/0 = 0 and x/0 = inf."""
    estimate = np.asarray(estimate, dtype=np.float64)
    se = np.asarray(se, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, estimate / np.where(se > 0, se, 1.0), np.where(estimate == 0, 0.0, np.inf))
    return z


def bonferroni_z(z_crit: float, cells: int) -> float:
    """Two-sided critical value keeping the family-wise level of ``z_crit`` over ``cells``."""
    if cells <= 1:
        return float(z_crit)
    alpha = math.erfc(z_crit / math.sqrt(2.0))
    return float(-special.ndtri(alpha / (2.0 * cells)))


def binomial_se(p, n):
    p = np.asarray(p, dtype=np.float64)
    return np.sqrt(p * (1.0 - p) / max(n, 1))
