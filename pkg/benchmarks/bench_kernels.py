"""Compare the compiled and pure-Python kernel backends.

Runs each kernel on identical inputs with both backends, checks that the
outputs agree bit for bit, and prints the median wall time per call.

    python benchmarks/bench_kernels.py [--repeat 5] [--samples 2000]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from synfire_bp import kernels, oracle


def _median_time(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _cases(rng, n_samples: int):
    dims = (400, 400, 10)
    net = oracle.init(oracle.InitConfig(seed=0), dims)
    x = (rng.random((n_samples, dims[0])) < 0.25).astype(np.uint8)
    labels = rng.integers(0, 10, n_samples).astype(np.int64)
    order = np.arange(n_samples, dtype=np.int64)
    pre = np.flatnonzero(rng.random(400) < 0.25).astype(np.int64)
    post = np.flatnonzero(rng.random(400) < 0.25).astype(np.int64)

    def accumulate(mod):
        out = np.zeros(400, dtype=np.int32)
        mod.accumulate_columns(net.w1, pre, out)
        return out

    def hebbian(mod):
        w = net.w1.copy()
        for _ in range(20):
            mod.hebbian_update(w, pre, post, 2, -256, 254)
        return w

    def train(mod):
        w1, w2 = net.w1.copy(), net.w2.copy()
        st = mod.run_oracle(w1, w2, x, labels, order, 1024, -256, 254, -254, 254, 2, True)
        return np.concatenate([st.ravel(), w1.ravel(), w2.ravel()])

    return {"accumulate_columns": accumulate, "hebbian_update x20": hebbian,
            f"run_oracle ({n_samples} samples)": train}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--samples", type=int, default=2000)
    args = ap.parse_args(argv)

    mods = kernels.backends()
    if "cython" not in mods:
        print("compiled backend not built; only the Python backend is available")
    cases = _cases(np.random.default_rng(0), args.samples)
    print(f"{'kernel':<28} " + " ".join(f"{name:>12}" for name in mods) + "   speedup  equal")
    for label, fn in cases.items():
        results = {name: fn(mod) for name, mod in mods.items()}
        ref = next(iter(results.values()))
        equal = all(np.array_equal(ref, r) for r in results.values())
        times = {name: _median_time(lambda m=mod: fn(m), args.repeat) for name, mod in mods.items()}
        speed = times["python"] / times["cython"] if "cython" in times else 1.0
        cols = " ".join(f"{times[n] * 1e3:10.2f}ms" for n in mods)
        print(f"{label:<28} {cols} {speed:8.1f}x  {equal}")


if __name__ == "__main__":
    main()
