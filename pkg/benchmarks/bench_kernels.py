"""Time one robust step with the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--points 257 1025] [--refine 1 8] [--repeat 3]

Prints a CSV table (case, backend timings, speedup, max difference) to stdout.
"""
import argparse
import csv
import statistics
import sys
import time

import numpy as np

from robust_semigroup import _backend
from robust_semigroup.measures import GridSpec, LevyModel, increment_lattice
from robust_semigroup.transport import Penalty, robust_operator

CASES = [
    ("ball", LevyModel.brownian(), Penalty.ball(1.0), 1),
    ("power", LevyModel.brownian(), Penalty.power(1.0, 4.0), 1),
    ("plane", LevyModel(2, [0, 0], [[1.0, 0.3], [0.3, 1.0]]), Penalty.ball(1.0), 2),
]


def time_call(fn, repeat):
    out, samples = None, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        samples.append(time.perf_counter() - t0)
    return out, statistics.median(samples)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, nargs="+", default=[257, 1025], help="1-d grid sizes")
    parser.add_argument("--plane-points", type=int, default=49, help="2-d grid size per axis")
    parser.add_argument("--refine", type=int, nargs="+", default=[1, 8])
    parser.add_argument("--t", type=float, default=2.0**-4, help="step length")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if "compiled" not in _backend.available():
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1

    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["case", "points", "refine", "compiled_s", "python_s", "speedup", "max_abs_diff"])
    for name, model, pen, d in CASES:
        sizes = args.points if d == 1 else [args.plane_points]
        for n in sizes:
            spec = GridSpec(d, 8.0 if d == 1 else 6.0, n)
            x = spec.coordinates()
            vals = np.exp(-0.5 * np.sum(x**2, axis=-1))
            offs, w = increment_lattice(model, args.t, spec)
            for m in args.refine:
                res = {}
                for backend in ("compiled", "python"):
                    run = lambda: robust_operator(vals, spec, offs, w, pen, args.t, refine=m, backend=backend)[0]  # noqa: E731
                    run()  # warm the offset and increment caches
                    res[backend] = time_call(run, args.repeat)
                (a, ta), (b, tb) = res["compiled"], res["python"]
                writer.writerow([name, n, m, f"{ta:.4f}", f"{tb:.4f}", f"{tb / ta:.1f}",
                                 f"{np.abs(a - b).max():.1e}"])
                sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
