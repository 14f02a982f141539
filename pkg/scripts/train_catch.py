#!/usr/bin/env python3
"""Train Catch across a few seeds and plot the learning curves.

Runs the same small configuration once per seed, writes each run's
artifacts under --out/<seed>/, and renders a combined elite-mean curve
with a min-max band.  Every run is reproducible from its run.json.
"""

import argparse
from pathlib import Path

from evofarm.cli import run_training
from evofarm.config import build_run_config
from evofarm.svgplot import plot_learning_curves

BASE = {
    "ga.population": "21",
    "ga.truncation": "3",
    "ga.mutation_power": "0.005",
    "ga.reevals": "3",
    "ga.generations": "20",
    "env.game": "catch",
    "env.frame_cap": "1200",
    "env.params.drops": "3",
    "farm.mode": "threads",
    "farm.threads": "2",
    "out.checkpoint_interval": "10",
}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/catch", help="output root")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--generations", type=int, default=20)
    args = ap.parse_args()

    root = Path(args.out)
    csvs = []
    for seed in args.seeds:
        items = dict(BASE)
        items["ga.master_seed"] = str(seed)
        items["ga.generations"] = str(args.generations)
        items["out.dir"] = str(root / f"seed{seed}")
        cfg = build_run_config(items)
        print(f"== seed {seed} ==")
        code = run_training(cfg)
        if code != 0:
            return code
        csvs.append(root / f"seed{seed}" / "stats.csv")

    svg = plot_learning_curves(csvs, root / "curves.svg",
                               title=f"Catch, {len(csvs)} seeds")
    print(f"learning curves: {svg}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
