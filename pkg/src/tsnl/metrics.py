"""Posterior accuracy metrics, rank statistics and observation ACF."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

_LOG_2PI = math.log(2.0 * math.pi)


def _prep(samples, theta0):
    s = np.asarray(samples, dtype=float)
    s = s.reshape(-1, 1) if s.ndim == 1 else s
    t0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if s.shape[0] < 1:
        raise ValueError("need at least one sample")
    if s.shape[1] != t0.size:
        raise ValueError("samples and theta0 differ in dimension")
    return s, t0


def e_kde(samples, theta0) -> float:
    """Negative log density of ``theta0`` under a unit-bandwidth Gaussian KDE."""
    s, t0 = _prep(samples, theta0)
    K, d = s.shape
    sq = ((s - t0) ** 2).sum(axis=1)
    return float(-logsumexp(-0.5 * sq) + math.log(K) + 0.5 * d * _LOG_2PI)


def e_min(samples, theta0) -> float:
    s, t0 = _prep(samples, theta0)
    return float(np.sqrt(((s - t0) ** 2).sum(axis=1)).min())


def bias_stdev(samples, theta0) -> tuple[float, float]:
    s, t0 = _prep(samples, theta0)
    m = s.mean(axis=0)
    bias = float(np.linalg.norm(t0 - m))
    stdev = float(np.sqrt(((s - m) ** 2).sum(axis=1).mean()))
    return bias, stdev


def rank_statistic(samples, theta0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-dimension count of samples below ``theta0``.

    Ties are broken uniformly at random among the tied positions.
    """
    s, t0 = _prep(samples, theta0)
    rng = rng if rng is not None else np.random.default_rng()
    below = (s < t0).sum(axis=0)
    ties = (s == t0).sum(axis=0)
    extra = np.array([rng.integers(0, k + 1) if k else 0 for k in ties])
    return (below + extra).astype(int)


def lse_bounds(e_min_value: float, K: int, d_theta: int) -> tuple[float, float]:
    """Lower and upper bounds on ``e_kde`` implied by ``e_min`` (unit bandwidth)."""
    base = 0.5 * e_min_value ** 2 + 0.5 * d_theta * _LOG_2PI
    return base, base + math.log(K)


@dataclass
class MetricReport:
    e_kde: float
    e_min: float
    bias: float
    stdev: float
    rank: np.ndarray
    cost: int
    n_samples: int = 0
    d_theta: int = 1

    @property
    def rmse(self) -> float:
        return math.sqrt(self.bias ** 2 + self.stdev ** 2)

    def lse_sandwich_holds(self, slack: float = 1e-9) -> bool:
        lo, hi = lse_bounds(self.e_min, self.n_samples, self.d_theta)
        return lo - slack <= self.e_kde <= hi + slack


def metric_report(samples, theta0, cost: int = 0, rng: np.random.Generator | None = None,
                  rank_samples: int | None = 100) -> MetricReport:
    """All metrics for one sample set. Ranks use ``rank_samples`` evenly thinned draws."""
    s, t0 = _prep(samples, theta0)
    b, sd = bias_stdev(s, t0)
    rs = s
    if rank_samples is not None and s.shape[0] > rank_samples:
        rs = s[np.linspace(0, s.shape[0] - 1, rank_samples).round().astype(int)]
    rep = MetricReport(e_kde(s, t0), e_min(s, t0), b, sd, rank_statistic(rs, t0, rng), int(cost),
                       s.shape[0], s.shape[1])
    if not rep.lse_sandwich_holds():
        raise AssertionError(f"LSE sandwich violated: {rep}")
    return rep


def acf_matrix(y, L: int) -> np.ndarray:
    """Lag-``L`` sample autocovariance over the ``T - L`` aligned pairs."""
    y = np.asarray(y, dtype=float)
    y = y.reshape(-1, 1) if y.ndim == 1 else y
    T = y.shape[0]
    if L < 0 or T <= L:
        raise ValueError(f"need T > L >= 0 (T={T}, L={L})")
    yc = y - y.mean(axis=0)
    return yc[: T - L].T @ yc[L:] / (T - L)


def acf_norm(y, L: int) -> float:
    """Frobenius norm of the lag-``L`` autocovariance matrix."""
    return float(np.linalg.norm(acf_matrix(y, L), "fro"))


def acf_curve(y, L_max: int) -> np.ndarray:
    return np.array([acf_norm(y, L) for L in range(L_max + 1)])
