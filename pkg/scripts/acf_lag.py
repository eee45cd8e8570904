"""Observation ACF curves and the selected lag for each model.

    python scripts/acf_lag.py [--out results/acf] [--tau 0.2]
"""

import argparse
from pathlib import Path

from tsnl.config import parse_config
from tsnl.experiments import run_acf_study

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/acf")
    ap.add_argument("--tau", type=float, default=0.2)
    args = ap.parse_args()
    for name in ("lgssm", "sv", "lv"):
        cfg = parse_config(CONFIGS / f"{name}.yaml")
        path, choice = run_acf_study(cfg, Path(args.out) / name, tau=args.tau)
        print(f"{name}: L = {choice.L}  ({path})")


if __name__ == "__main__":
    main()
