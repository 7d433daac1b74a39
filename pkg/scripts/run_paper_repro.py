#!/usr/bin/env python3
"""Run the full positioning experiment and print the headline tables.

Equivalent to `locus report --config examples/paper_repro.json --out report_out`,
with a compact console summary. Set LOCUS_THREADS=N to spread the
(environment, seed) cells over N worker processes.
"""

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from locus.pipeline import load_config, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    default_cfg = os.path.join(os.path.dirname(__file__), "..", "examples", "paper_repro.json")
    ap.add_argument("--config", default=default_cfg)
    ap.add_argument("--out", default="report_out")
    args = ap.parse_args()

    config = load_config(args.config)
    t0 = time.time()
    report = run_experiment(config, out_dir=args.out)
    dt = time.time() - t0

    cols = [f"{m}_{l}" for m in config.models for l in config.layouts]
    print(f"\nMAE (mm), mean over {len(config.seeds)} seeds")
    print(f"{'environment':18s}" + "".join(f"{c:>14s}" for c in cols))
    for name, row in report["mae_table_mm"].items():
        print(f"{name:18s}" + "".join(f"{row[c]:14.1f}" for c in cols))

    if report["improvement_percent"]:
        print("\nHybrid improvement over RSSI-only (%)")
        print(f"{'environment':18s}" + "".join(f"{m:>10s}" for m in config.models))
        for name, row in report["improvement_percent"].items():
            print(f"{name:18s}" + "".join(f"{row[m]:10.1f}" for m in config.models))

    print("\nClosed-form baselines (mm)")
    for name, row in report["baseline_mae_mm"].items():
        print(f"{name:18s} trilat {row['trilat']:10.1f}   hybrid {row['hybrid_closed_form']:10.1f}")

    print(f"\nwrote {args.out}/ in {dt:.1f}s ({report['total_rejects']} redraws)")


if __name__ == "__main__":
    main()
