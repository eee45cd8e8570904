"""Sequential neural likelihood with and without likelihood truncation.

T-SNL learns one conditional ``q(y_t | y_{t-L:t-1}, theta)`` from every
time step of every simulation and scores observations with the product of
those factors. SNL learns ``q(y_{1:T} | theta)`` from whole sequences.
Both alternate simulation, flow training and MCMC on the surrogate
posterior for a fixed number of rounds.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .metrics import acf_curve
from .nde import (ConditionalFlow, FlowConfig, TrainConfig, TrainingError, flow_logprob, train_flow,
                  DTYPE)
from .priors import Prior
from .samplers import McmcConfig, PosteriorSamples, sample_posterior
from .ssm import CostLedger, LaggedDataset, SsmModel, lag_windows, simulate_batch

log = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    ALL = "all"
    LAST = "last"
    BEST = "best"


def build_round_dataset(strategy, previous: LaggedDataset | None, new: LaggedDataset, y_obs,
                        N: int) -> LaggedDataset:
    """Training set for the next round.

    ``best`` keeps the ``N`` trajectories (from all rounds) closest to
    ``y_obs`` in Euclidean distance, with all of their lagged records.
    """
    strategy = Strategy(strategy)
    if strategy is Strategy.LAST or previous is None and strategy is Strategy.ALL:
        return new
    pool = new if previous is None else previous.concat(new)
    if strategy is Strategy.ALL:
        return pool
    y_obs = np.asarray(y_obs, dtype=float).reshape(pool.T, pool.d_y)
    dist = np.sqrt(((pool.observations - y_obs) ** 2).sum(axis=(1, 2)))
    if pool.n_trajectories < N:
        warnings.warn(f"BEST: only {pool.n_trajectories} trajectories available, keeping all")
        return pool
    keep = np.sort(np.argsort(dist, kind="stable")[:N])
    return pool.subset(keep)


@dataclass
class LagChoice:
    L: int
    acf: np.ndarray
    threshold: float


def select_lag(y_obs, L_max: int, tau: float = 0.2) -> LagChoice:
    """Smallest lag whose ACF norm drops below ``tau`` times the lag-0 norm.

    ``y_obs`` may be one sequence or a list of sequences; in the latter case
    the ACF curves are averaged.
    """
    seqs = y_obs if isinstance(y_obs, (list, tuple)) else [y_obs]
    T = min(np.asarray(s).shape[0] for s in seqs)
    if T <= L_max:
        raise ValueError(f"need T > L_max (T={T}, L_max={L_max})")
    curve = np.mean([acf_curve(s, L_max) for s in seqs], axis=0)
    if curve[0] == 0.0:
        warnings.warn("observation sequence is constant; using L = 1")
        return LagChoice(1, curve, tau)
    below = np.flatnonzero(curve[1:] < tau * curve[0])
    L = int(below[0]) + 1 if below.size else L_max
    return LagChoice(L, curve, tau)


# --------------------------------------------------------------------------
# surrogate likelihoods
# --------------------------------------------------------------------------

def _theta_features(prior: Prior | None, theta):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return prior.to_unconstrained(theta) if prior is not None else theta


def truncated_loglik(flow: ConditionalFlow, y_obs, theta, L: int, prior: Prior | None = None) -> float:
    """``sum_t log q(y_t | y_{t-L:t-1}, theta)`` with zero-padded early windows.

    ``theta`` enters the flow through ``prior.to_unconstrained`` when a prior
    is given (the scale used in training), otherwise as is.
    """
    y = np.asarray(y_obs, dtype=float)
    y = y.reshape(-1, 1) if y.ndim == 1 else y
    feats = _theta_features(prior, theta)
    d_y = y.shape[1]
    if flow.D != d_y or flow.d_c != L * d_y + feats.size:
        raise ValueError(f"flow (D={flow.D}, d_c={flow.d_c}) does not match L={L}, d_y={d_y}, "
                         f"d_theta={feats.size}")
    win = lag_windows(y, L).reshape(y.shape[0], L * d_y)
    ctx = np.hstack([win, np.broadcast_to(feats, (y.shape[0], feats.size))])
    return float(np.sum(flow_logprob(flow, y, ctx)))


class TruncatedLikelihood:
    """Cached T-SNL likelihood for a fixed observation sequence."""

    def __init__(self, flow: ConditionalFlow, y_obs, L: int, prior: Prior | None = None):
        y = np.asarray(y_obs, dtype=float)
        self.y = y.reshape(-1, 1) if y.ndim == 1 else y
        self.flow, self.L, self.prior = flow, L, prior
        T, d_y = self.y.shape
        d_theta = flow.d_c - L * d_y
        if flow.D != d_y or d_theta < 1:
            raise ValueError("flow does not match the observation dimension and lag")
        self._yt = torch.as_tensor(self.y, dtype=DTYPE)
        self._win = torch.as_tensor(lag_windows(self.y, L).reshape(T, L * d_y).copy(), dtype=DTYPE)

    def __call__(self, theta) -> float:
        feats = torch.as_tensor(_theta_features(self.prior, theta), dtype=DTYPE)
        ctx = torch.cat([self._win, feats.expand(self._yt.shape[0], -1)], dim=1)
        with torch.no_grad():
            lp = self.flow.log_prob(self._yt, ctx)
        v = float(lp.sum())
        return v if math.isfinite(v) else -math.inf


class SequenceLikelihood:
    """SNL likelihood ``q(y_{1:T} | theta)`` for a fixed observation sequence."""

    def __init__(self, flow: ConditionalFlow, y_obs, prior: Prior | None = None):
        y = np.asarray(y_obs, dtype=float).reshape(1, -1)
        if flow.D != y.shape[1]:
            raise ValueError("flow event dimension differs from T * d_y")
        self.flow, self.prior = flow, prior
        self._yt = torch.as_tensor(y, dtype=DTYPE)

    def __call__(self, theta) -> float:
        feats = torch.as_tensor(_theta_features(self.prior, theta), dtype=DTYPE).reshape(1, -1)
        with torch.no_grad():
            v = float(self.flow.log_prob(self._yt, feats)[0])
        return v if math.isfinite(v) else -math.inf


# --------------------------------------------------------------------------
# sequential loop
# --------------------------------------------------------------------------

@dataclass
class RoundDiagnostics:
    round: int
    train_loss: float
    val_loss: float
    acceptance_rate: float
    dynamics_calls: int
    n_train_records: int
    failed_simulations: int = 0


@dataclass
class InferenceResult:
    samples: PosteriorSamples
    diagnostics: list
    flow: ConditionalFlow
    dataset: LaggedDataset
    lag: int | None = None
    lag_choice: LagChoice | None = None
    proposals: list = field(default_factory=list)

    def write_diagnostics(self, path) -> None:
        write_diagnostics_csv(path, self.diagnostics)


def write_diagnostics_csv(path, diagnostics) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "train_loss", "val_loss", "acceptance_rate", "dynamics_calls"])
        for d in diagnostics:
            w.writerow([d.round, repr(d.train_loss), repr(d.val_loss), repr(d.acceptance_rate), d.dynamics_calls])


def tsnl_training_arrays(data: LaggedDataset, prior: Prior | None):
    """Events ``y_t`` and contexts ``[window, theta features]`` for every record."""
    win = data.windows.reshape(len(data), data.lag * data.d_y)
    feats = _theta_features(prior, data.record_thetas) if prior is not None else data.record_thetas
    return data.targets, np.hstack([win, feats])


def snl_training_arrays(data: LaggedDataset, prior: Prior | None):
    events = data.observations.reshape(data.n_trajectories, -1)
    feats = _theta_features(prior, data.thetas) if prior is not None else data.thetas
    return events, feats


def _train_with_retry(make_flow, warm: ConditionalFlow | None, events, contexts, train_cfg, rng):
    flow = warm if warm is not None else make_flow()
    try:
        return train_flow(flow, events, contexts, train_cfg, rng)
    except TrainingError as err:
        log.warning("flow training failed (%s); retrying with a fresh initialization", err)
        return train_flow(make_flow(), events, contexts, train_cfg, rng)


def _proposal_from_chain(chain: PosteriorSamples, N: int, prior: Prior):
    """Proposals for the next round.

    The first ``N`` calls return evenly thinned chain states. Replacements for
    failed simulations come from random chain states for another ``N``
    calls, then from the prior, so a surrogate posterior sitting where the
    simulator fails cannot stall the round.
    """
    picks = list(chain.thin(N).samples)
    state = {"i": 0}

    def propose(stream):
        i = state["i"]
        state["i"] += 1
        if i < len(picks):
            return picks[i]
        if i < 2 * N:
            return chain.samples[stream.integers(len(chain))]
        if i == 2 * N:
            log.warning("repeated simulation failures near the surrogate posterior; re-proposing from the prior")
        return prior.sample(stream)

    return propose


def _best_start(loglik, prior: Prior, candidates):
    best, best_val = None, -math.inf
    for th in candidates:
        v = loglik(th) + prior.log_density(th)
        if v > best_val:
            best, best_val = th, v
    if best is None:
        raise RuntimeError("surrogate log-likelihood is -inf at every candidate start")
    return best


def _sequential(kind: str, model: SsmModel, prior: Prior, y_obs, *, rounds: int, n_sims: int,
                lag: int | None, strategy, flow_cfg: FlowConfig | None, train_cfg: TrainConfig | None,
                mcmc_cfg: McmcConfig | None, rng: np.random.Generator,
                ledger: CostLedger | None) -> InferenceResult:
    if rounds < 1 or n_sims < 1:
        raise ValueError("rounds and n_sims must be >= 1")
    ledger = ledger if ledger is not None else CostLedger()
    flow_cfg, train_cfg, mcmc_cfg = flow_cfg or FlowConfig(), train_cfg or TrainConfig(), mcmc_cfg or McmcConfig()
    y_obs = np.asarray(y_obs, dtype=float).reshape(-1, model.d_y)
    T, d_y, d_theta = y_obs.shape[0], model.d_y, prior.dim
    data_lag = lag if kind == "tsnl" else 1

    if kind == "tsnl":
        D, d_c = d_y, lag * d_y + d_theta
        arrays = tsnl_training_arrays
        make_lik = lambda flow: TruncatedLikelihood(flow, y_obs, lag, prior)
    else:
        D, d_c = T * d_y, d_theta
        arrays = snl_training_arrays
        make_lik = lambda flow: SequenceLikelihood(flow, y_obs, prior)
    make_flow = lambda: ConditionalFlow(D, d_c, flow_cfg, seed=int(rng.integers(2**31)))

    dataset, flow, chain = None, None, None
    diagnostics, proposals = [], []
    for r in range(rounds):
        propose = (lambda s: prior.sample(s)) if chain is None else _proposal_from_chain(chain, n_sims, prior)
        thetas, trajs, failed = simulate_batch(model, propose, n_sims, T, rng, ledger)
        proposals.append(thetas)
        new = LaggedDataset(thetas, np.stack([tr.observations for tr in trajs]), data_lag)
        dataset = build_round_dataset(strategy, dataset, new, y_obs, n_sims)
        events, contexts = arrays(dataset, prior)
        fit = _train_with_retry(make_flow, flow, events, contexts, train_cfg, rng)
        flow = fit.flow
        loglik = make_lik(flow)
        start = _best_start(loglik, prior, thetas)
        chain = sample_posterior(loglik, prior, start, mcmc_cfg, rng)
        diagnostics.append(RoundDiagnostics(r, fit.train_losses[-1] if fit.train_losses else math.nan,
                                            fit.best_val_loss, chain.acceptance_rate, ledger.dynamics_calls,
                                            len(events), failed))
        log.info("%s round %d: val loss %.4f, acceptance %.2f, calls %d", kind, r, fit.best_val_loss,
                 chain.acceptance_rate, ledger.dynamics_calls)
    return InferenceResult(chain, diagnostics, flow, dataset, lag if kind == "tsnl" else None, None, proposals)


def tsnl_run(model: SsmModel, prior: Prior, y_obs, L: int | None = None, rounds: int = 3, n_sims: int = 10,
             strategy="all", flow_cfg: FlowConfig | None = None, train_cfg: TrainConfig | None = None,
             mcmc_cfg: McmcConfig | None = None, rng: np.random.Generator | None = None,
             ledger: CostLedger | None = None, L_max: int = 20, tau: float = 0.2) -> InferenceResult:
    """Truncated SNL. With ``L=None`` the lag comes from :func:`select_lag` on ``y_obs``."""
    rng = rng if rng is not None else np.random.default_rng()
    y = np.asarray(y_obs, dtype=float).reshape(-1, model.d_y)
    choice = None
    if L is None:
        choice = select_lag(y, min(L_max, y.shape[0] - 1), tau)
        L = choice.L
    if L < 1:
        raise ValueError("L must be >= 1")
    res = _sequential("tsnl", model, prior, y, rounds=rounds, n_sims=n_sims, lag=L, strategy=strategy,
                      flow_cfg=flow_cfg, train_cfg=train_cfg, mcmc_cfg=mcmc_cfg, rng=rng, ledger=ledger)
    res.lag_choice = choice
    return res


def snl_run(model: SsmModel, prior: Prior, y_obs, rounds: int = 3, n_sims: int = 10, strategy="all",
            flow_cfg: FlowConfig | None = None, train_cfg: TrainConfig | None = None,
            mcmc_cfg: McmcConfig | None = None, rng: np.random.Generator | None = None,
            ledger: CostLedger | None = None) -> InferenceResult:
    """Standard SNL: the flow models whole observation sequences."""
    rng = rng if rng is not None else np.random.default_rng()
    return _sequential("snl", model, prior, y_obs, rounds=rounds, n_sims=n_sims, lag=None, strategy=strategy,
                       flow_cfg=flow_cfg, train_cfg=train_cfg, mcmc_cfg=mcmc_cfg, rng=rng, ledger=ledger)


def amortized_extend(flow: ConditionalFlow, y_obs_extended, prior: Prior, L: int,
                     mcmc_cfg: McmcConfig | None = None, rng: np.random.Generator | None = None,
                     theta_init=None) -> PosteriorSamples:
    """Posterior for a longer observation sequence using an already trained T-SNL flow."""
    rng = rng if rng is not None else np.random.default_rng()
    before = flow.checksum()
    loglik = TruncatedLikelihood(flow, y_obs_extended, L, prior)
    if theta_init is None:
        theta_init = _best_start(loglik, prior, prior.sample(rng, 50))
    chain = sample_posterior(loglik, prior, theta_init, mcmc_cfg or McmcConfig(), rng)
    if flow.checksum() != before:
        raise AssertionError("flow weights changed during amortized inference")
    return chain


def exact_grid_posterior(model: SsmModel, prior: Prior, y, grid):
    """Brute-force posterior of a scalar parameter on a grid (exact likelihood required).

    ``grid`` should be evenly spaced on the prior's unconstrained scale; the
    weights include the Jacobian so they are posterior masses per cell.

    Returns ``(grid, weights, mean, stdev)`` on the constrained scale.
    """
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if prior.dim != 1:
        raise ValueError("grid posterior needs a scalar parameter")
    z = prior.to_unconstrained(grid[:, None])
    logp = np.array([model.exact_loglik([g], y) for g in grid]) + np.atleast_1d(prior.log_prob_z(z))
    w = np.exp(logp - logp.max())
    w /= w.sum()
    mean = float(w @ grid)
    sd = float(np.sqrt(w @ (grid - mean) ** 2))
    return grid, w, mean, sd
