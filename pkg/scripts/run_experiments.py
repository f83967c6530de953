"""Run every experiment config in scripts/configs through the CLI.

    python scripts/run_experiments.py [--jobs N] [name ...]

Outputs land in each config's output directory (or $WARPSMOOTH_OUT).
"""
import argparse
import pathlib
import sys
import time

from warpsmooth.cli import main

CONFIGS = pathlib.Path(__file__).parent / "configs"
SUBCOMMAND = {"flat_smoothing": "smoothing-scan", "trapped_smoothing": "smoothing-scan",
              "resolvent": "resolvent-scan", "commutant": "commutant-test"}


def run(names, jobs):
    rc = 0
    for name in names:
        t0 = time.perf_counter()
        code = main([SUBCOMMAND[name], "--config", str(CONFIGS / f"{name}.json"), "--jobs", str(jobs)])
        print(f"{name:<18} exit={code}  {time.perf_counter() - t0:7.1f} s", flush=True)
        rc = rc or code
    return rc


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*", default=list(SUBCOMMAND))
    ap.add_argument("--jobs", type=int, default=1)
    a = ap.parse_args()
    sys.exit(run(a.names, a.jobs))
