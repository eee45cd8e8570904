"""Error-vs-cost benchmarks for the LGSSM, SV and LV models (all four methods).

    python scripts/benchmark_all.py [--out results] [--trials 3] [--quick]

Writes one directory per model with results.csv, metric-vs-cost SVGs and
rank histograms.
"""

import argparse
import dataclasses
from pathlib import Path

from tsnl.config import parse_config
from tsnl.experiments import run_experiment, summarize

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results")
    ap.add_argument("--trials", type=int)
    ap.add_argument("--quick", action="store_true", help="two small budgets, one trial")
    args = ap.parse_args()
    for name in ("lgssm", "sv", "lv"):
        cfg = parse_config(CONFIGS / f"{name}.yaml")
        changes = {"out": str(Path(args.out) / name)}
        if args.trials:
            changes["trials"] = args.trials
        if args.quick:
            changes.update(trials=1, budgets=[15, 30])
        cfg = dataclasses.replace(cfg, **changes).validate()
        path, rows = run_experiment(cfg)
        print(f"{name}: {path}")
        for method, pts in summarize(rows).items():
            for cost, m in pts:
                print(f"  {method:9s} cost {cost:10.0f}  E_min {m['e_min']:.3e}  E_KDE {m['e_kde']:.4f}  "
                      f"bias {m['bias']:.3e}  stdev {m['stdev']:.3e}")


if __name__ == "__main__":
    main()
