"""Run the simulation tables from ``configs/`` and write summary CSVs.

Usage::

    python scripts/run_tables.py                 # table1, table2, mcar
    python scripts/run_tables.py table1 --trials 50 --out results
"""

import argparse
import pathlib
import sys
import time

from sparse_poisson.cli import cmd_simulate

ROOT = pathlib.Path(__file__).resolve().parents[1]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("names", nargs="*", default=["table1", "table2", "mcar"])
    parser.add_argument("--out", default=str(ROOT / "results"))
    parser.add_argument("--trials", type=int)
    parser.add_argument("--workers", type=int)
    args = parser.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.names:
        config = ROOT / "configs" / f"{name}.json"
        target = out / f"{name}.csv"
        start = time.perf_counter()
        cmd_simulate(str(config), str(target), trials=args.trials, workers=args.workers)
        print(f"{name}: {target} ({time.perf_counter() - start:.0f} s)", file=sys.stderr)
        print(target.read_text())


if __name__ == "__main__":
    main()
