"""MCMC samplers used over exact, estimated and surrogate posteriors.

Both samplers work on the unconstrained coordinates ``z`` of a
:class:`~tsnl.priors.Prior`; :func:`sample_posterior` handles the mapping
back to ``theta``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .priors import Prior

log = logging.getLogger(__name__)


@dataclass
class PosteriorSamples:
    """A chain (or particle set) of parameter samples.

    ``samples`` live on the constrained scale; ``z`` holds the matching
    unconstrained coordinates when a sampler produced them.
    """

    samples: np.ndarray
    acceptance_rate: float = 1.0
    log_target: np.ndarray | None = None
    accepted: np.ndarray | None = None
    z: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        self.samples = s.reshape(-1, 1) if s.ndim == 1 else s

    def __len__(self):
        return self.samples.shape[0]

    @property
    def mean(self) -> np.ndarray:
        if self.weights is not None:
            return np.average(self.samples, axis=0, weights=self.weights)
        return self.samples.mean(axis=0)

    def _take(self, idx) -> "PosteriorSamples":
        pick = lambda a: None if a is None else np.asarray(a)[idx]
        return PosteriorSamples(self.samples[idx], self.acceptance_rate, pick(self.log_target),
                                pick(self.accepted), pick(self.z), pick(self.weights))

    def burn(self, frac: float) -> "PosteriorSamples":
        return self._take(slice(int(len(self) * frac), None))

    def thin(self, n: int) -> "PosteriorSamples":
        """``n`` evenly spaced samples (all of them if fewer exist)."""
        if n >= len(self):
            return self
        return self._take(np.linspace(0, len(self) - 1, n).round().astype(int))

    def to_csv(self, path, names=None) -> None:
        d = self.samples.shape[1]
        names = names or [f"theta_{i + 1}" for i in range(d)]
        lt = self.log_target if self.log_target is not None else np.full(len(self), np.nan)
        acc = self.accepted if self.accepted is not None else np.ones(len(self), dtype=bool)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", *names, "log_target", "accepted"])
            for k in range(len(self)):
                w.writerow([k, *(repr(float(v)) for v in self.samples[k]), repr(float(lt[k])), int(bool(acc[k]))])


@dataclass
class McmcConfig:
    steps: int = 1000
    burn_in: float = 0.2
    scale: float = 0.1
    sampler: str = "auto"   # rwm | ess | auto (ess when the prior is Gaussian in z)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 <= self.burn_in < 1.0:
            raise ValueError("burn_in must lie in [0, 1)")
        if self.sampler not in ("rwm", "ess", "auto"):
            raise ValueError(f"unknown sampler {self.sampler!r}")


def rwm_sample(log_target: Callable[[np.ndarray], float], theta_init, steps: int, scale,
               rng: np.random.Generator, fixed: np.ndarray | None = None,
               init_log_target: float | None = None) -> PosteriorSamples:
    """Random-walk Metropolis with isotropic Gaussian proposals.

    The target value of the current state is cached and never recomputed,
    which keeps the chain exact when ``log_target`` is an unbiased
    likelihood estimate on the exp scale (pseudo-marginal MCMC).
    """
    x = np.atleast_1d(np.asarray(theta_init, dtype=float)).copy()
    step_sd = np.broadcast_to(np.asarray(scale, dtype=float), x.shape).copy()
    if fixed is not None:
        step_sd[np.asarray(fixed, dtype=bool)] = 0.0
    lp = float(log_target(x)) if init_log_target is None else float(init_log_target)
    if not np.isfinite(lp):
        raise ValueError("log_target(theta_init) must be finite")
    chain = np.empty((steps, x.size))
    lps = np.empty(steps)
    acc = np.zeros(steps, dtype=bool)
    for i in range(steps):
        prop = x + step_sd * rng.standard_normal(x.size)
        lp_prop = float(log_target(prop))
        if np.log(rng.random()) < lp_prop - lp:
            x, lp = prop, lp_prop
            acc[i] = True
        chain[i], lps[i] = x, lp
    rate = float(acc.mean())
    if rate == 0.0:
        log.warning("random-walk Metropolis accepted no moves in %d steps", steps)
    return PosteriorSamples(chain, rate, lps, acc, z=chain.copy())


def ess_sample(log_likelihood: Callable[[np.ndarray], float], gaussian_prior, theta_init, steps: int,
               rng: np.random.Generator) -> PosteriorSamples:
    """Elliptical slice sampling under a Gaussian prior.

    ``gaussian_prior`` is a ``(mean, std)`` pair for a diagonal prior, a
    ``(mean, cov)`` pair with a 2-D ``cov``, or a :class:`Prior` that is
    Gaussian on its unconstrained scale (then ``theta_init`` and the
    returned chain are in that scale).
    """
    if isinstance(gaussian_prior, Prior):
        form = gaussian_prior.gaussian_form()
        if form is None:
            raise ValueError("prior is not Gaussian on the unconstrained scale; use rwm_sample")
        gaussian_prior = form
    mean, spread = (np.asarray(a, dtype=float) for a in gaussian_prior)
    mean = np.atleast_1d(mean)
    if spread.ndim == 2:
        chol = np.linalg.cholesky(spread)
        draw = lambda: chol @ rng.standard_normal(mean.size)
    else:
        sd = np.broadcast_to(spread, mean.shape)
        draw = lambda: sd * rng.standard_normal(mean.size)

    f = np.atleast_1d(np.asarray(theta_init, dtype=float)) - mean
    ll = float(log_likelihood(f + mean))
    if not np.isfinite(ll):
        raise ValueError("log_likelihood(theta_init) must be finite")
    chain = np.empty((steps, mean.size))
    lls = np.empty(steps)
    for i in range(steps):
        nu = draw()
        threshold = ll + math.log(rng.random())
        phi = rng.uniform(0.0, 2.0 * math.pi)
        lo, hi = phi - 2.0 * math.pi, phi
        while True:
            prop = f * math.cos(phi) + nu * math.sin(phi)
            ll_prop = float(log_likelihood(prop + mean))
            if ll_prop > threshold:
                break
            if phi > 0:
                hi = phi
            else:
                lo = phi
            if hi - lo < 1e-12:
                # bracket collapsed onto the current point
                prop, ll_prop = f, ll
                break
            phi = rng.uniform(lo, hi)
        assert ll_prop >= threshold, "slice sampler left the slice"
        f, ll = prop, ll_prop
        chain[i], lls[i] = f + mean, ll
    return PosteriorSamples(chain, 1.0, lls, np.ones(steps, dtype=bool), z=chain.copy())


def log_posterior_z(loglik: Callable[[np.ndarray], float], prior: Prior) -> Callable[[np.ndarray], float]:
    """Unnormalized posterior on the unconstrained scale (Jacobian included)."""

    def target(z):
        lp = prior.log_prob_z(z)
        if not np.isfinite(lp):
            return -np.inf
        ll = loglik(prior.from_unconstrained(z))
        return lp + ll if np.isfinite(ll) else -np.inf

    return target


def sample_posterior(loglik: Callable[[np.ndarray], float], prior: Prior, theta_init,
                     cfg: McmcConfig, rng: np.random.Generator) -> PosteriorSamples:
    """Run the configured sampler and return post-burn-in samples on the theta scale."""
    z0 = prior.to_unconstrained(theta_init)
    use_ess = cfg.sampler == "ess" or (cfg.sampler == "auto" and prior.gaussian_form() is not None)
    if use_ess:
        ll_z = lambda z: loglik(prior.from_unconstrained(z))
        chain = ess_sample(ll_z, prior, z0, cfg.steps, rng)
    else:
        chain = rwm_sample(log_posterior_z(loglik, prior), z0, cfg.steps, cfg.scale, rng, fixed=prior.fixed)
    chain.samples = prior.from_unconstrained(chain.z)
    return chain.burn(cfg.burn_in)
