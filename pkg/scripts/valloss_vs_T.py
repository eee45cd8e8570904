"""Validation loss against sequence length for SNL and T-SNL.

    python scripts/valloss_vs_T.py [--out results/valloss] [--trials 5]
"""

import argparse
import dataclasses
from pathlib import Path

from tsnl.config import parse_config
from tsnl.experiments import run_valloss_study, valloss_means

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "valloss.yaml"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/valloss")
    ap.add_argument("--trials", type=int)
    args = ap.parse_args()
    cfg = parse_config(CONFIG)
    cfg = dataclasses.replace(cfg, out=args.out, trials=args.trials or cfg.trials)
    path, rows = run_valloss_study(cfg)
    print(f"wrote {path}")
    print("   T   SNL/sequence   T-SNL/step   T-SNL/step*T")
    for T, (snl, ts, tsT) in valloss_means(rows).items():
        print(f"{T:4d}   {snl:12.4f}   {ts:10.4f}   {tsT:12.4f}")


if __name__ == "__main__":
    main()
