"""Experiment harness: method dispatch, trials over budgets, CSV and SVG output."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import svg
from .abc import smc_abc_run
from .config import ExperimentConfig
from .inference import select_lag, snl_run, tsnl_run
from .metrics import acf_curve, metric_report
from .models import make_model
from .nde import ConditionalFlow, train_flow
from .particle import BpfConfig, bpf_mcmc
from .samplers import PosteriorSamples
from .ssm import CostLedger, LaggedDataset, SsmModel, simulate_batch, simulate_trajectory

log = logging.getLogger(__name__)

METRICS = ("e_kde", "e_min", "bias", "stdev")


@dataclass
class ResultRow:
    method: str
    budget: int            # dynamics calls actually spent (ledger reading)
    trial: int
    e_kde: float
    e_min: float
    bias: float
    stdev: float
    rank: str              # space-separated, one entry per parameter
    wall_clock: float
    seed: int
    target_budget: int     # configured number of simulations
    status: str = "ok"

    @classmethod
    def header(cls):
        return [f.name for f in dataclasses.fields(cls)]

    def values(self):
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out.append(repr(v) if isinstance(v, float) else v)
        return out


def build_model(cfg: ExperimentConfig) -> SsmModel:
    return make_model(cfg.model.name, cfg.model.params, cfg.ground_truth)


def run_method(method: str, model: SsmModel, y_obs, n_sims: int, cfg: ExperimentConfig,
               rng: np.random.Generator, ledger: CostLedger) -> PosteriorSamples:
    """Run one method with a budget of ``n_sims`` length-T simulations."""
    prior = model.prior
    T = np.asarray(y_obs).shape[0]
    if method == "tsnl":
        t = cfg.tsnl
        return tsnl_run(model, prior, y_obs, t.L, t.rounds, max(1, n_sims // t.rounds), t.strategy, cfg.flow,
                        cfg.train, cfg.mcmc, rng, ledger, L_max=min(t.L_max, T - 1), tau=t.tau).samples
    if method == "snl":
        s = cfg.snl
        return snl_run(model, prior, y_obs, s.rounds, max(1, n_sims // s.rounds), s.strategy, cfg.flow,
                       cfg.train, cfg.mcmc, rng, ledger).samples
    if method == "smc-abc":
        abc_cfg = dataclasses.replace(cfg.abc, budget=n_sims * T)
        return smc_abc_run(model, prior, y_obs, abc_cfg, rng, ledger).samples
    if method == "bpf-mcmc":
        b = cfg.bpf
        n_p = b.n_particles or max(1, n_sims // b.steps)
        chain = bpf_mcmc(model, prior, y_obs, b.steps, b.proposal_scale, BpfConfig(n_p), rng, ledger)
        return chain.burn(b.burn_in)
    raise ValueError(f"unknown method {method!r}")


def equal_weight(samples: PosteriorSamples, rng: np.random.Generator) -> np.ndarray:
    """Sample array with weights (if any) turned into an unweighted resample."""
    if samples.weights is None:
        return samples.samples
    w = np.asarray(samples.weights, dtype=float)
    idx = rng.choice(len(w), size=len(w), p=w / w.sum())
    return samples.samples[idx]


def row_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


def _run_trial(cfg: ExperimentConfig, trial: int) -> list[ResultRow]:
    try:
        import torch
        torch.set_num_threads(1)
    except ImportError:
        pass
    model = build_model(cfg)
    y_obs = simulate_trajectory(model, model.ground_truth, cfg.T, np.random.default_rng([cfg.seed, trial]),
                                CostLedger()).observations
    rows = []
    for mi, method in enumerate(cfg.methods):
        for bi, n_sims in enumerate(cfg.budgets):
            s = row_seed(cfg.seed, trial, mi, bi)
            rng, ledger = np.random.default_rng(s), CostLedger()
            t0 = time.perf_counter()
            try:
                post = run_method(method, model, y_obs, int(n_sims), cfg, rng, ledger)
                rep = metric_report(equal_weight(post, rng), model.ground_truth, ledger.dynamics_calls, rng,
                                    cfg.rank_samples)
                wall = time.perf_counter() - t0 if cfg.record_wall_clock else 0.0
                rows.append(ResultRow(method, ledger.dynamics_calls, trial, rep.e_kde, rep.e_min, rep.bias,
                                      rep.stdev, " ".join(map(str, rep.rank)), wall, s, int(n_sims)))
            except Exception as err:  # a failed run is recorded, the experiment goes on
                log.exception("%s trial %d budget %d failed", method, trial, n_sims)
                wall = time.perf_counter() - t0 if cfg.record_wall_clock else 0.0
                msg = f"failed: {type(err).__name__}: {err}".replace("\n", " ")
                rows.append(ResultRow(method, ledger.dynamics_calls, trial, math.nan, math.nan, math.nan, math.nan,
                                      "", wall, s, int(n_sims), msg))
    return rows


def write_rows(path, rows, header) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r.values() if hasattr(r, "values") else r)


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(rows: list[ResultRow]) -> dict:
    """``{method: [(mean_budget, {metric: mean}) per target budget]}`` over successful rows."""
    out = {}
    for method in dict.fromkeys(r.method for r in rows):
        points = []
        for tb in sorted({r.target_budget for r in rows if r.method == method}):
            ok = [r for r in rows if r.method == method and r.target_budget == tb and r.status == "ok"]
            if ok:
                points.append((float(np.mean([r.budget for r in ok])),
                               {m: float(np.mean([getattr(r, m) for r in ok])) for m in METRICS}))
        out[method] = points
    return out


def plot_results(rows: list[ResultRow], out: Path, rank_samples: int, title: str = "") -> list[Path]:
    files = []
    summary = summarize(rows)
    for m in METRICS:
        series = {meth: [(b, v[m]) for b, v in pts] for meth, pts in summary.items()}
        p = out / f"{m}_vs_cost.svg"
        svg.line_chart(p, series, f"{title} {m}".strip(), "dynamics calls", m, logx=True)
        files.append(p)
    for meth in summary:
        ranks = [list(map(int, r.rank.split())) for r in rows if r.method == meth and r.status == "ok" and r.rank]
        if not ranks:
            continue
        ranks = np.array(ranks)
        top = max(rank_samples, int(ranks.max()))
        edges = np.linspace(0, top + 1, 11)
        for j in range(ranks.shape[1]):
            counts, _ = np.histogram(ranks[:, j], bins=edges)
            p = out / f"rank_hist_{meth}_theta{j + 1}.svg"
            svg.histogram(p, counts.tolist(), edges.tolist(), f"{meth} rank of theta_{j + 1}", "rank",
                          reference=len(ranks) / 10)
            files.append(p)
    return files


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> tuple[Path, list[ResultRow]]:
    """All (method, budget, trial) runs; writes ``results.csv`` plus SVG plots."""
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            per_trial = list(ex.map(_run_trial, [cfg] * cfg.trials, range(cfg.trials)))
    else:
        per_trial = [_run_trial(cfg, t) for t in range(cfg.trials)]
    rows = [r for rs in per_trial for r in rs]
    order = {m: i for i, m in enumerate(cfg.methods)}
    rows.sort(key=lambda r: (order[r.method], r.target_budget, r.trial))
    path = out / "results.csv"
    write_rows(path, rows, ResultRow.header())
    plot_results(rows, out, cfg.rank_samples, cfg.model.name)
    return path, rows


# --------------------------------------------------------------------------
# validation loss versus T
# --------------------------------------------------------------------------

VALLOSS_HEADER = ["T", "trial", "n_sims", "L", "snl_val_loss", "tsnl_val_loss", "tsnl_val_loss_x_T"]


def valloss_point(model: SsmModel, T: int, n_sims: int, L: int, cfg: ExperimentConfig,
                  rng: np.random.Generator) -> tuple[float, float]:
    """Best validation losses (SNL per sequence, T-SNL per record) on one prior-predictive dataset."""
    from .inference import snl_training_arrays, tsnl_training_arrays
    prior = model.prior
    thetas, trajs, _ = simulate_batch(model, lambda s: prior.sample(s), n_sims, T, rng, CostLedger())
    obs = np.stack([tr.observations for tr in trajs])
    seq = LaggedDataset(thetas, obs, 1)
    ev, ctx = snl_training_arrays(seq, prior)
    snl = train_flow(ConditionalFlow(ev.shape[1], ctx.shape[1], cfg.flow, int(rng.integers(2**31))),
                     ev, ctx, cfg.train, rng)
    lagged = LaggedDataset(thetas, obs, L)
    ev, ctx = tsnl_training_arrays(lagged, prior)
    tsnl = train_flow(ConditionalFlow(ev.shape[1], ctx.shape[1], cfg.flow, int(rng.integers(2**31))),
                      ev, ctx, cfg.train, rng)
    return snl.best_val_loss, tsnl.best_val_loss


def run_valloss_study(cfg: ExperimentConfig, out_dir=None) -> tuple[Path, list[list]]:
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg)
    v = cfg.valloss
    rows = []
    for T in v.T_grid:
        L = min(v.L, T)
        for trial in range(cfg.trials):
            rng = np.random.default_rng([cfg.seed, trial, T])
            snl_loss, tsnl_loss = valloss_point(model, T, v.n_sims, L, cfg, rng)
            rows.append([T, trial, v.n_sims, L, repr(snl_loss), repr(tsnl_loss), repr(tsnl_loss * T)])
    path = out / "valloss.csv"
    write_rows(path, rows, VALLOSS_HEADER)
    means = valloss_means(rows)
    series = {"SNL (per sequence)": [(T, m[0]) for T, m in means.items()],
              "T-SNL (per step)": [(T, m[1]) for T, m in means.items()],
              "T-SNL (per step x T)": [(T, m[2]) for T, m in means.items()]}
    svg.line_chart(out / "valloss.svg", series, "validation loss vs T", "T", "validation loss")
    return path, rows


def valloss_means(rows) -> dict:
    """``{T: (snl, tsnl, tsnl*T)}`` trial means."""
    out = {}
    for T in sorted({int(r[0]) for r in rows}):
        sel = [r for r in rows if int(r[0]) == T]
        out[T] = tuple(float(np.mean([float(r[k]) for r in sel])) for k in (4, 5, 6))
    return out


# --------------------------------------------------------------------------
# ACF of observations at the ground truth
# --------------------------------------------------------------------------

def run_acf_study(cfg: ExperimentConfig, out_dir=None, tau: float | None = None):
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg)
    rng = np.random.default_rng([cfg.seed, 0])
    seqs = [simulate_trajectory(model, model.ground_truth, cfg.T, stream, CostLedger()).observations
            for stream in rng.spawn(cfg.acf.n_sequences)]
    L_max = min(cfg.acf.L_max, cfg.T - 1)
    choice = select_lag(seqs, L_max, cfg.tsnl.tau if tau is None else tau)
    curve = np.mean([acf_curve(s, L_max) for s in seqs], axis=0)
    rel = curve / curve[0] if curve[0] > 0 else np.zeros_like(curve)
    path = out / "acf.csv"
    write_rows(path, [[L, repr(float(c)), repr(float(r))] for L, (c, r) in enumerate(zip(curve, rel))],
               ["lag", "acf_norm", "relative"])
    svg.line_chart(out / "acf.svg", {"mean ACF norm / lag 0": list(enumerate(rel.tolist())),
                                     "threshold": [(0, choice.threshold), (L_max, choice.threshold)]},
                   f"ACF ({cfg.model.name}), selected L = {choice.L}", "lag", "relative Frobenius norm")
    return path, choice
