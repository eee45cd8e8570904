"""Bootstrap particle filter and particle-marginal Metropolis-Hastings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .priors import Prior
from .samplers import PosteriorSamples, log_posterior_z, rwm_sample
from .ssm import CostLedger, SsmModel


@dataclass
class BpfConfig:
    n_particles: int = 500
    resampling: str = "multinomial"

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.resampling != "multinomial":
            raise ValueError("only multinomial resampling is supported")


def bpf_loglik(model: SsmModel, theta, y, cfg: BpfConfig, rng: np.random.Generator,
               ledger: CostLedger | None = None) -> float:
    """Bootstrap-filter estimate of ``log p(y_{1:T} | theta)``.

    Returns ``-inf`` as soon as every particle has zero weight.
    """
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1, model.d_y)
    n = cfg.n_particles
    x = model.sample_initial(theta, n, rng)
    total = 0.0
    for t in range(y.shape[0]):
        x = model.sample_transition(theta, x, rng, ledger)
        logw = model.observation_logpdf(theta, x, y[t])
        logw = np.where(np.isnan(logw), -np.inf, logw)
        lse = logsumexp(logw)
        if not np.isfinite(lse):
            return -np.inf
        total += lse - np.log(n)
        w = np.exp(logw - lse)
        idx = rng.choice(n, size=n, p=w / w.sum())
        x = x[idx]
    return float(total)


def bpf_mcmc(model: SsmModel, prior: Prior, y, steps: int = 1000, proposal_scale: float = 0.1,
             cfg: BpfConfig | None = None, rng: np.random.Generator | None = None,
             ledger: CostLedger | None = None, theta_init=None, max_init_tries: int = 100) -> PosteriorSamples:
    """Pseudo-marginal random-walk Metropolis with a bootstrap-filter likelihood.

    The chain moves on the prior's unconstrained scale; returned samples are
    mapped back to ``theta``. No burn-in is removed here.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = cfg or BpfConfig()
    rng = rng if rng is not None else np.random.default_rng()
    loglik = lambda th: bpf_loglik(model, th, y, cfg, rng, ledger)
    target = log_posterior_z(loglik, prior)

    # start from a prior draw with a finite likelihood estimate
    for _ in range(max_init_tries):
        th0 = prior.sample(rng) if theta_init is None else np.asarray(theta_init, dtype=float)
        z0 = prior.to_unconstrained(th0)
        lp0 = target(z0)
        if np.isfinite(lp0):
            break
        theta_init = None
    else:
        raise RuntimeError("no prior draw gave a finite likelihood estimate")

    chain = rwm_sample(target, z0, steps, proposal_scale, rng, fixed=prior.fixed, init_log_target=lp0)
    chain.samples = prior.from_unconstrained(chain.z)
    return chain
