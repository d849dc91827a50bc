#!/usr/bin/env python3
"""End-to-end demo: synthesize a cohort, mine the exports, train every model,
build Weibull bands, evaluate on an independent cohort and print the
validation summary.

Run:
    python scripts/run_pipeline.py --workdir /tmp/dvhdemo [--seed 42]
"""
import argparse
import csv
import json
import subprocess
import sys
import time
from pathlib import Path


def cli(args, cwd):
    proc = subprocess.run([sys.executable, "-m", "dvhpredict", *args], cwd=cwd)
    if proc.returncode != 0:
        sys.exit(proc.returncode)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--workdir", default="demo_run")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--n-train", type=int, default=94)
    parser.add_argument("--n-validation", type=int, default=39)
    parser.add_argument("--noise-std", type=float, default=0.0)
    args = parser.parse_args()

    root = Path(args.workdir)
    root.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    cli(["synth", "--out", "fixtures", "--n", str(args.n_train), "--seed", str(args.seed),
         "--noise-std", str(args.noise_std), "--format", "both"], root)
    cli(["synth", "--out", "vfixtures", "--n", str(args.n_validation),
         "--seed", str(args.seed + 1), "--noise-std", str(args.noise_std)], root)
    cli(["ingest", "--in", "fixtures", "--out", "library.json"], root)
    cli(["ingest", "--in", "vfixtures", "--out", "validation.json"], root)
    cli(["train", "--library", "library.json", "--out", "bundle.dvhm",
         "--seed", str(args.seed)], root)
    cli(["band", "--library", "library.json", "--out-dir", "bands"], root)
    cli(["evaluate", "--bundle", "bundle.dvhm", "--library", "validation.json",
         "--out-dir", "reports", "--band-dir", "bands"], root)

    print(f"\npipeline finished in {time.time() - t0:.0f}s; validation MAE summary:\n")
    for organ in ("bladder", "rectum"):
        print(f"== {organ} ==")
        with open(root / "reports" / f"report_{organ}.csv") as fh:
            for row in csv.DictReader(fh):
                if row["dataset"] == "validation":
                    print(
                        f"  {row['method']:<10} full {row['0-6420']:>7}  "
                        f"high {row['4000-6420']:>7}  5300cGy {row['5300']:>7}"
                    )
    print(f"\nartifacts under {root.resolve()}")
    print("serve the dashboard API with:")
    print(f"  dvhpredict serve --bundle {root / 'bundle.dvhm'} --band-dir {root / 'bands'}")


if __name__ == "__main__":
    main()
