#!/usr/bin/env python3
"""Writes the synthetic mixture benchmarks to data/benchmarks/.

Each benchmark is a 16-dimensional Gaussian mixture whose class means vary in
the first `intrinsic` coordinates only; the remaining coordinates carry small
isotropic noise. Re-running the script reproduces the checked-in files.
"""

import argparse
import json
from pathlib import Path

import numpy as np

DIM = 16

BENCHMARKS = {
    "separable": dict(classes=10, spread=6.0, intrinsic=2, noise=0.1, decay=1.0, seed=101),
    "overlapping": dict(classes=25, spread=5.0, intrinsic=2, noise=0.1, decay=1.0, seed=203),
    "imbalanced": dict(classes=25, spread=5.0, intrinsic=2, noise=0.1, decay=0.92, seed=303),
}


def build(name, classes, spread, intrinsic, noise, decay, seed):
    rng = np.random.default_rng(seed)
    means = np.zeros((classes, DIM))
    means[:, :intrinsic] = spread * rng.standard_normal((classes, intrinsic))
    variances = np.full(DIM, noise * noise)
    variances[:intrinsic] = 1.0
    priors = decay ** np.arange(classes)
    priors /= priors.sum()
    return {
        "name": name,
        "seed": seed,
        "n_support": 2000,
        "n_query": 2000,
        "priors": [float(p) for p in priors],
        "means": [[float(v) for v in row] for row in means],
        "diagonal_variances": [[float(v) for v in variances] for _ in range(classes)],
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data" / "benchmarks")
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, params in BENCHMARKS.items():
        path = args.out / f"{name}.json"
        path.write_text(json.dumps(build(name, **params), indent=1) + "\n")
        print(path)


if __name__ == "__main__":
    main()
