"""T-SNL and SNL posteriors for the LGSSM noise variance against the Kalman grid posterior.

    python scripts/lgssm_posterior_check.py [--trials 10] [--T 200] [--sims 10] [--rounds 3]

Also demonstrates amortized re-use of the trained T-SNL flow on a longer
observation sequence.
"""

import argparse

import numpy as np

from tsnl.inference import amortized_extend, exact_grid_posterior, snl_run, tsnl_run
from tsnl.models import make_model
from tsnl.ssm import CostLedger, simulate_trajectory


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--T", type=int, default=200)
    ap.add_argument("--sims", type=int, default=10)
    ap.add_argument("--rounds", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    m = make_model("lgssm1d")
    grid = np.exp(np.linspace(np.log(1e-3), np.log(2.0), 200))
    print("trial  oracle mean (sd)      T-SNL mean  z     SNL mean  z     amortized(2T) mean")
    for trial in range(args.trials):
        rng = np.random.default_rng([args.seed, trial])
        y = simulate_trajectory(m, m.ground_truth, 2 * args.T, rng).observations
        y1 = y[: args.T]
        _, _, mu, sd = exact_grid_posterior(m, m.prior, y1, grid)
        t = tsnl_run(m, m.prior, y1, None, args.rounds, args.sims, rng=rng, ledger=CostLedger())
        s = snl_run(m, m.prior, y1, args.rounds, args.sims, rng=rng, ledger=CostLedger())
        ext = amortized_extend(t.flow, y, m.prior, t.lag, rng=rng)
        zt = (t.samples.mean[0] - mu) / sd
        zs = (s.samples.mean[0] - mu) / sd
        print(f"{trial:5d}  {mu:.4f} ({sd:.4f})     {t.samples.mean[0]:.4f}  {zt:+.2f}  "
              f"{s.samples.mean[0]:.4f}  {zs:+.2f}  {ext.mean[0]:.4f}")


if __name__ == "__main__":
    main()
