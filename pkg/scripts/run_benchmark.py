#!/usr/bin/env python3
"""Batched-rollout throughput sweep.

Writes benchmark.json (and optionally benchmark.csv) with median wall times
and rollouts/s per (horizon, batch size) pair, and checks that runtime grows
at most linearly with the horizon.
"""

import argparse
import os
import sys

from terradyn.batch import benchmark


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--horizons", type=float, nargs="+",
                    default=(1.0, 2.0, 5.0))
    ap.add_argument("--batches", type=int, nargs="+", default=(64, 512))
    ap.add_argument("--repetitions", type=int, default=3)
    ap.add_argument("--dt", type=float, default=0.01)
    ap.add_argument("--precision", choices=("f32", "f64"), default="f32")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--grid-size", type=int, default=128)
    ap.add_argument("--out", default="bench_out")
    args = ap.parse_args(argv)

    report = benchmark(horizons=args.horizons, batch_sizes=args.batches,
                       repetitions=args.repetitions, dt=args.dt,
                       precision=args.precision, workers=args.workers,
                       grid_size=args.grid_size)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "benchmark.json"), "w") as fh:
        fh.write(report.to_json() + "\n")
    with open(os.path.join(args.out, "benchmark.csv"), "w") as fh:
        report.write_csv(fh)

    for e in report.entries:
        print(f"B={e.batch_size:5d} horizon={e.horizon:5.2f}s "
              f"median={e.median_time:7.3f}s  {e.throughput:8.1f} rollouts/s")
    print(f"linear-in-horizon (slack 1.3): "
          f"{'ok' if report.linearity_ok else 'VIOLATED'}")
    return 0 if report.linearity_ok else 2


if __name__ == "__main__":
    sys.exit(main())
