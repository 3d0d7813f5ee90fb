"""Time the compiled and pure-Python kernel backends side by side.

    python benchmarks/bench_backends.py --repeat 20 --out bench.csv
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from amskv import numkernel as nk
from amskv.cachecore import AmsKv
from amskv.schedule import ThetaMode, derive_budgets
from amskv.toymodel import ToyModelConfig, generate, init_model


def cases(rng):
    a, b = rng.normal(size=(256, 64)), rng.normal(size=(64, 256))
    scores = rng.normal(size=(256, 430))
    grid = rng.normal(size=(13, 13, 16))
    q = rng.normal(size=(4, 256, 16))
    k, v = rng.normal(size=(4, 430, 16)), rng.normal(size=(4, 430, 16))
    model = init_model(ToyModelConfig())
    spec = derive_budgets(model.config.schedule, theta=ThetaMode.quantile())
    return {
        "matmul 256x64x256": lambda: nk.matmul(a, b),
        "softmax_rows 256x430": lambda: nk.softmax_rows(scores),
        "bilinear_resize 13->16 (16 ch)": lambda: nk.bilinear_resize(grid, 16, 16),
        "attention 4h 256q 430k d16": lambda: nk.attention(q, k, v),
        "generate 2 layers ams_kv": lambda: generate(model, AmsKv(), spec),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=10, help="timed runs per case (best is kept)")
    parser.add_argument("--number", type=int, default=5, help="calls per timed run")
    parser.add_argument("--out", help="CSV file to write (default: stdout only)")
    args = parser.parse_args(argv)

    backends = nk.available_backends()
    if "compiled" not in backends:
        print("compiled backend unavailable; timing the Python fallback only", file=sys.stderr)
    rows = []
    for name in backends:
        with nk.use_backend(name):
            for case, fn in cases(np.random.default_rng(0)).items():
                fn()
                best = min(timeit.repeat(fn, repeat=args.repeat, number=args.number)) / args.number
                rows.append({"backend": name, "case": case, "seconds": best})
    base = {r["case"]: r["seconds"] for r in rows if r["backend"] == "python"}
    for r in rows:
        r["speedup_vs_python"] = base[r["case"]] / r["seconds"]
        print(f"{r['backend']:>9}  {r['case']:<32} {r['seconds'] * 1e3:9.3f} ms  x{r['speedup_vs_python']:.2f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
