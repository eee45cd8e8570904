"""Command-line entry point: ``tsnl {simulate,infer,acf,benchmark,valloss}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .abc import smc_abc_run
from .config import METHODS, ConfigError, parse_config
from .experiments import (build_model, equal_weight, run_acf_study, run_experiment, run_valloss_study,
                          write_rows)
from .inference import snl_run, tsnl_run
from .metrics import metric_report
from .particle import BpfConfig, bpf_mcmc
from .ssm import CostLedger, read_trajectory_csv, simulate_trajectory, write_trajectory_csv


def _load(args):
    cfg = parse_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    if getattr(args, "method", None):
        changes["methods"] = [args.method]
    if getattr(args, "budget", None) is not None:
        changes["budgets"] = [args.budget]
    return dataclasses.replace(cfg, **changes).validate()


def cmd_simulate(args) -> int:
    cfg = _load(args)
    model = build_model(cfg)
    ledger = CostLedger()
    traj = simulate_trajectory(model, model.ground_truth, cfg.T, np.random.default_rng([cfg.seed, 0]), ledger)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out / "trajectory.csv", traj)
    print(f"wrote {out / 'trajectory.csv'} (T={cfg.T}, dynamics calls {ledger.dynamics_calls})")
    return 0


def cmd_infer(args) -> int:
    cfg = _load(args)
    method, n_sims = cfg.methods[0], int(cfg.budgets[-1])
    model = build_model(cfg)
    if args.data:
        y_obs = read_trajectory_csv(args.data).observations
    else:
        y_obs = simulate_trajectory(model, model.ground_truth, cfg.T, np.random.default_rng([cfg.seed, 0]),
                                    CostLedger()).observations
    rng, ledger = np.random.default_rng(cfg.seed), CostLedger()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    T, prior = y_obs.shape[0], model.prior
    if method == "tsnl":
        t = cfg.tsnl
        res = tsnl_run(model, prior, y_obs, t.L, t.rounds, max(1, n_sims // t.rounds), t.strategy, cfg.flow,
                       cfg.train, cfg.mcmc, rng, ledger, min(t.L_max, T - 1), t.tau)
        res.write_diagnostics(out / "diagnostics.csv")
        post = res.samples
        print(f"lag L = {res.lag}")
    elif method == "snl":
        s = cfg.snl
        res = snl_run(model, prior, y_obs, s.rounds, max(1, n_sims // s.rounds), s.strategy, cfg.flow,
                      cfg.train, cfg.mcmc, rng, ledger)
        res.write_diagnostics(out / "diagnostics.csv")
        post = res.samples
    elif method == "smc-abc":
        res = smc_abc_run(model, prior, y_obs, dataclasses.replace(cfg.abc, budget=n_sims * T), rng, ledger)
        write_rows(out / "abc_trace.csv", res.trace_rows(), ["iteration", "epsilon", "acceptance_rate", "ess", "c_hat"])
        post = res.samples
        print(f"SMC-ABC stopped: {res.stop_reason}")
    else:
        b = cfg.bpf
        n_p = b.n_particles or max(1, n_sims // b.steps)
        post = bpf_mcmc(model, prior, y_obs, b.steps, b.proposal_scale, BpfConfig(n_p), rng, ledger).burn(b.burn_in)
    post.to_csv(out / "samples.csv", list(prior.names))
    summary = {"method": method, "dynamics_calls": ledger.dynamics_calls,
               "posterior_mean": post.mean.tolist(), "acceptance_rate": post.acceptance_rate}
    if not args.data:
        rep = metric_report(equal_weight(post, rng), model.ground_truth, ledger.dynamics_calls, rng, cfg.rank_samples)
        summary.update(e_kde=rep.e_kde, e_min=rep.e_min, bias=rep.bias, stdev=rep.stdev, rank=rep.rank.tolist(),
                       ground_truth=model.ground_truth.tolist())
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def cmd_acf(args) -> int:
    cfg = _load(args)
    path, choice = run_acf_study(cfg)
    print(f"wrote {path}; selected L = {choice.L} (tau = {choice.threshold})")
    return 0


def cmd_benchmark(args) -> int:
    cfg = _load(args)
    path, rows = run_experiment(cfg)
    failed = sum(r.status != "ok" for r in rows)
    print(f"wrote {path}: {len(rows)} rows, {failed} failed")
    return 0


def cmd_valloss(args) -> int:
    cfg = _load(args)
    path, rows = run_valloss_study(cfg)
    print(f"wrote {path}: {len(rows)} rows")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsnl", description="Simulation-based inference for state-space models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    cmds = {"simulate": cmd_simulate, "infer": cmd_infer, "acf": cmd_acf, "benchmark": cmd_benchmark,
            "valloss": cmd_valloss}
    for name, fn in cmds.items():
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML experiment config")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        if name in ("infer", "benchmark"):
            s.add_argument("--method", choices=METHODS)
            s.add_argument("--budget", type=int, help="simulations per run")
        if name == "infer":
            s.add_argument("--data", help="trajectory CSV with observations (default: simulate at ground truth)")
        s.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except Exception as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
