#!/usr/bin/env python3
"""Sweep one TabINR hyperparameter axis (Table 3 / Fig. 4 style).

    python scripts/run_ablation.py configs/latent_ablation.json --out results/latent.csv
"""

import argparse
import logging

from tabinr import bench


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--out", default="results/ablation.csv")
    p.add_argument("--workers", type=int, default=None)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    rows, _ = bench.run_ablation(bench.read_config(args.config), args.out, args.workers,
                                 lambda r: logging.info("seed %d: %s", r["seed"], r["error"] or r["nrmse_mean"]))
    for r in rows:
        print(f"{r['axis']}={r['value']}: nrmse {r['nrmse_mean']} +- {r['nrmse_std']}  "
              f"auroc {r['auroc_mean']}  ({r['wall_time_mean_s']:.1f}s/run)")


if __name__ == "__main__":
    main()
