"""SMC-ABC with a Gaussian perturbation kernel and adaptive tolerances.

Tolerances follow the ratio-supremum rule: a kernel-mixture model of the
density ratio between consecutive populations is fitted by a
multiplicative fixed-point iteration, its supremum ``c_hat`` is found by a
mean-shift fixed point, and the next tolerance is the ``1 / c_hat``
quantile of the current distances. The run stops once ``c_hat`` is close
to one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.stats import multivariate_normal

from .priors import Prior
from .samplers import PosteriorSamples
from .ssm import CostLedger, SimulationError, SsmModel, simulate_trajectory

log = logging.getLogger(__name__)


class FixedPointError(RuntimeError):
    def __init__(self, msg, residual=None, constraint=None):
        self.residual, self.constraint = residual, constraint
        super().__init__(f"{msg} (fixed-point residual={residual}, constraint residual={constraint})")


@dataclass
class RatioEstimate:
    """Kernel mixture ``r(theta) = sum_n alpha_n exp(-|theta - anchor_n|^2 / 2 sigma^2)``."""

    alpha: np.ndarray
    sigma: float
    anchors: np.ndarray
    e0: np.ndarray | None = None
    fp_residual: float = float("nan")
    constraint_residual: float = float("nan")
    iterations: int = 0

    def __post_init__(self):
        self.anchors = _rows(self.anchors)
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        if self.e0 is None:
            self.e0 = _gauss_kernel(self.anchors, self.anchors, self.sigma).sum(axis=1)

    def __call__(self, theta) -> np.ndarray | float:
        t = np.asarray(theta, dtype=float)
        pts = t.reshape(-1, self.anchors.shape[1])
        out = _gauss_kernel(pts, self.anchors, self.sigma) @ self.alpha
        return float(out[0]) if t.ndim <= 1 and pts.shape[0] == 1 and self.anchors.shape[1] == t.size else out


def _rows(a):
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def _gauss_kernel(a, b, sigma):
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * sigma * sigma))


def estimate_ratio_alpha(theta_prev, theta_curr, sigma: float, max_iters: int = 100_000,
                         tol: float = 1e-8, strict: bool = True) -> RatioEstimate:
    """Fit the ratio weights ``alpha`` by iterating ``alpha <- alpha * (E^T beta) / (N e0)``.

    ``beta = 1 / (E alpha)``, ``E[n, m] = k(theta_curr_n, theta_prev_m)`` and
    ``e0`` holds the row sums of the anchor Gram matrix. Each iterate is
    rescaled so that ``alpha . e0 = 1``. With ``strict=False`` the last
    iterate is returned instead of raising on non-convergence.
    """
    prev, curr = _rows(theta_prev), _rows(theta_curr)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    N = prev.shape[0]
    if N < 1 or curr.shape[0] != N:
        raise ValueError("need two particle sets of equal size N >= 1")
    E0 = _gauss_kernel(prev, prev, sigma)
    e0 = E0.sum(axis=1)
    E = _gauss_kernel(curr, prev, sigma)

    def f(a):
        Ea = np.maximum(E @ a, 1e-300)
        out = a * (E.T @ (1.0 / Ea)) / (N * e0)
        return out / (out @ e0)

    alpha = 1.0 / (N * e0)
    alpha /= alpha @ e0
    res = np.inf
    for it in range(1, max_iters + 1):
        new = f(alpha)
        res = float(np.abs(new - alpha).max())
        alpha = new
        if res < tol:
            break
    fp_res = float(np.abs(f(alpha) - alpha).max())
    con_res = float(abs(alpha @ e0 - 1.0))
    if strict and (fp_res >= tol or con_res >= tol):
        raise FixedPointError("ratio weights did not converge", fp_res, con_res)
    return RatioEstimate(alpha, sigma, prev, e0, fp_res, con_res, it)


def ratio_supremum(est: RatioEstimate, theta_init=None, max_iters: int = 1000, tol: float = 1e-10) -> float:
    """Estimate ``sup_theta r(theta)`` by mean-shift fixed points started at each anchor.

    The result is never below the ratio at any anchor or starting point.
    """
    starts = est.anchors if theta_init is None else np.vstack([est.anchors, _rows(theta_init)])
    best = float(np.max(est(starts)))
    converged = 0
    for x in starts:
        for _ in range(max_iters):
            w = est.alpha * _gauss_kernel(x[None, :], est.anchors, est.sigma)[0]
            sw = w.sum()
            if sw <= 0:
                break
            new = w @ est.anchors / sw
            step = float(np.abs(new - x).max())
            x = new
            if step < tol:
                converged += 1
                break
        best = max(best, float(est(x[None, :])[0]))
    if converged == 0:
        log.warning("mean-shift did not converge from any start; using the best evaluated point")
    return best


@dataclass
class AbcConfig:
    n_particles: int = 100
    ess_frac: float = 0.5
    budget: int | None = None          # max dynamics calls
    max_iterations: int = 50
    delta: float = 0.1                 # stop when c_hat < 1 + delta
    min_acceptance: float = 0.01
    initial_quantile: float = 0.5
    kernel_scale: float = 2.0
    alpha_max_iters: int = 5000
    alpha_tol: float = 1e-6

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("SMC-ABC needs at least two particles")


@dataclass
class AbcResult:
    samples: PosteriorSamples
    trace: list = field(default_factory=list)
    stop_reason: str = ""

    def trace_rows(self):
        return [(r["iteration"], r["epsilon"], r["acceptance_rate"], r["ess"], r["c_hat"]) for r in self.trace]


def _weighted_cov(z, w):
    m = w @ z
    zc = z - m
    cov = (zc * w[:, None]).T @ zc
    return 0.5 * (cov + cov.T)


def smc_abc_run(model: SsmModel, prior: Prior, y_obs, cfg: AbcConfig | None = None,
                rng: np.random.Generator | None = None, ledger: CostLedger | None = None) -> AbcResult:
    cfg = cfg or AbcConfig()
    rng = rng if rng is not None else np.random.default_rng()
    ledger = ledger if ledger is not None else CostLedger()
    y_obs = np.asarray(y_obs, dtype=float).reshape(-1, model.d_y)
    T, N = y_obs.shape[0], cfg.n_particles
    fixed = prior.fixed

    def distance(theta, stream):
        traj = simulate_trajectory(model, theta, T, stream, ledger)
        return float(np.linalg.norm(traj.observations - y_obs))

    def over_budget():
        return cfg.budget is not None and ledger.dynamics_calls >= cfg.budget

    # population 0: prior draws, no rejection
    z, d = [], []
    while len(z) < N:
        (stream,) = rng.spawn(1)
        th = prior.sample(stream)
        try:
            d.append(distance(th, stream))
        except SimulationError:
            continue
        z.append(prior.to_unconstrained(th))
    z, d = np.array(z), np.array(d)
    w = np.full(N, 1.0 / N)
    trace = [dict(iteration=0, epsilon=math.inf, acceptance_rate=1.0, ess=float(N), c_hat=math.nan,
                  resampled=False, dynamics_calls=ledger.dynamics_calls)]
    eps = float(np.quantile(d, cfg.initial_quantile))
    stop = "max_iterations"

    for it in range(1, cfg.max_iterations + 1):
        if over_budget():
            stop = "budget"
            break
        cov = cfg.kernel_scale * _weighted_cov(z, w)
        cov[np.ix_(fixed, fixed)] = 0.0
        cov += 1e-12 * np.eye(cov.shape[0])
        chol = np.linalg.cholesky(cov)
        new_z, new_d, attempts, partial = [], [], 0, False
        while len(new_z) < N:
            if over_budget() or (attempts >= N / cfg.min_acceptance and len(new_z) / attempts < cfg.min_acceptance):
                partial = True
                break
            (stream,) = rng.spawn(1)
            j = stream.choice(N, p=w)
            zs = z[j] + chol @ stream.standard_normal(z.shape[1])
            attempts += 1
            if not np.isfinite(prior.log_prob_z(zs)):
                continue
            try:
                dist = distance(prior.from_unconstrained(zs), stream)
            except SimulationError:
                continue
            if dist <= eps:
                new_z.append(zs)
                new_d.append(dist)
        if partial:
            stop = "budget" if over_budget() else "acceptance_floor"
            trace.append(dict(iteration=it, epsilon=eps, acceptance_rate=len(new_z) / max(attempts, 1),
                              ess=math.nan, c_hat=math.nan, resampled=False,
                              dynamics_calls=ledger.dynamics_calls, complete=False))
            break
        new_z, new_d = np.array(new_z), np.array(new_d)
        # importance weights against the mixture proposal, all on the z scale
        log_prior = np.atleast_1d(prior.log_prob_z(new_z))
        kern = multivariate_normal(np.zeros(z.shape[1]), cov, allow_singular=True)
        mix = np.array([np.sum(w * kern.pdf(zi - z)) for zi in new_z])
        logw = log_prior - np.log(np.maximum(mix, 1e-300))
        new_w = np.exp(logw - logw.max())
        new_w /= new_w.sum()
        ess = float(1.0 / np.sum(new_w ** 2))
        resampled = ess / N < cfg.ess_frac
        if resampled:
            idx = rng.choice(N, size=N, p=new_w)
            new_z, new_d, new_w = new_z[idx], new_d[idx], np.full(N, 1.0 / N)

        free = ~fixed
        prev_free, curr_free = z[:, free], new_z[:, free]
        sigma = float(np.median(pdist(prev_free))) if prev_free.shape[1] else 1.0
        if not sigma > 0:
            sigma = 1.0
        try:
            est = estimate_ratio_alpha(prev_free, curr_free, sigma, cfg.alpha_max_iters, cfg.alpha_tol)
        except FixedPointError as err:
            log.warning("%s; continuing with the last iterate", err)
            est = estimate_ratio_alpha(prev_free, curr_free, sigma, cfg.alpha_max_iters, cfg.alpha_tol,
                                       strict=False)
        c_hat = ratio_supremum(est)
        trace.append(dict(iteration=it, epsilon=eps, acceptance_rate=N / attempts, ess=ess, c_hat=c_hat,
                          resampled=resampled, dynamics_calls=ledger.dynamics_calls, complete=True))
        z, d, w = new_z, new_d, new_w
        if c_hat < 1.0 + cfg.delta:
            stop = "c_hat"
            break
        eps = float(np.quantile(d, min(1.0, 1.0 / c_hat)))

    theta = prior.from_unconstrained(z)
    samples = PosteriorSamples(theta, trace[-1]["acceptance_rate"], z=z, weights=w)
    return AbcResult(samples, trace, stop)

