"""Compiled versus numpy kernels, alone and inside a leave-one-out sweep.

    python3 benchmarks/bench_kernels.py [--n 200] [--repeat 5]

The LOO sweep runs in a subprocess per backend, because the backend is
chosen once at import time.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from softunlearn import _core_py

try:
    from softunlearn import _core
except ImportError:
    _core = None


def kernel_times(n, d, repeat):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(n, d))
    y = (rng.random(n) < 0.5).astype(float)
    w = np.ones(n)
    theta = rng.normal(size=d) * 0.1
    a, u = rng.normal(size=n), rng.normal(size=n)
    cases = {
        "logistic_accumulate": lambda k: k.logistic_accumulate(X, y, w, theta, 0.1, True),
        "gram_pair": lambda k: k.gram_pair(a, u),
        "compensated_dot": lambda k: k.compensated_dot(a, u),
    }
    rows = []
    for name, fn in cases.items():
        for label, mod in (("cython", _core), ("python", _core_py)):
            if mod is None:
                continue
            number = 200
            best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=repeat)) / number
            rows.append((name, label, best))
    return rows


LOO_SNIPPET = """
import json, time
from softunlearn import BACKEND
from softunlearn.data import gen_synthetic
from softunlearn.model import TrainConfig, train
from softunlearn.oracle import loo_retrain
ds = gen_synthetic("biased_gauss", {n_total}, seed=0)
X, y = ds.train_arrays()
cfg = TrainConfig()
base = train(X, y, cfg)
t0 = time.perf_counter()
for j in range(X.shape[0]):
    loo_retrain(X, y, j, cfg, warm_start=base)
print(json.dumps({{"backend": BACKEND, "seconds": time.perf_counter() - t0, "n": X.shape[0]}}))
"""


def loo_times(n):
    n_total = (n * 3) // 2
    out = []
    for pure in ("0", "1"):
        env = dict(os.environ, SOFTUNLEARN_PURE_PYTHON=pure)
        res = subprocess.run([sys.executable, "-c", LOO_SNIPPET.format(n_total=n_total)],
                             env=env, capture_output=True, text=True, check=True)
        out.append(json.loads(res.stdout))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200, help="training rows")
    ap.add_argument("--d", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    print(f"kernels, n={args.n}, d={args.d} (best of {args.repeat})")
    for name, label, sec in kernel_times(args.n, args.d, args.repeat):
        print(f"  {name:20s} {label:7s} {sec * 1e6:10.2f} us")
    print("full leave-one-out sweep")
    for r in loo_times(args.n):
        print(f"  {r['backend']:7s} n={r['n']:5d} {r['seconds']:8.3f} s")


if __name__ == "__main__":
    main()
