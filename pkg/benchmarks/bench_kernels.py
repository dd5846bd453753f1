"""Compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Each kernel runs on the same seeded inputs under both backends.  The script
checks that the results agree, then prints the best wall time of each.
"""

import argparse
import time

import numpy as np

from copyne import _pykernels as py
from copyne.kernels import compiled_kernels as cy


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def ctc_case(rng, B=16, T=60, V=40, L=20):
    logits = rng.normal(size=(B, T, V))
    logp = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
    labels = rng.integers(1, V, size=(B, L)).astype(np.int64)
    return (logp, np.full(B, T, dtype=np.int64), labels, np.full(B, L, dtype=np.int64), 0)


def seq_case(rng, n=400):
    return rng.integers(0, 30, size=n).astype(np.int64), rng.integers(0, 30, size=n).astype(np.int64)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if cy is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    cases = {
        "ctc_forward_backward (16x60x40, |y|=20)": ("ctc_forward_backward", ctc_case(rng)),
        "edit_distance (400 x 400)": ("edit_distance", seq_case(rng)),
        "align_ops (400 x 400)": ("align_ops", seq_case(rng)),
    }
    print(f"{'kernel':42s} {'python':>10s} {'cython':>10s} {'speedup':>8s}")
    for label, (name, inputs) in cases.items():
        t_py, out_py = best_time(lambda: getattr(py, name)(*inputs), args.repeat)
        t_cy, out_cy = best_time(lambda: getattr(cy, name)(*inputs), args.repeat)
        pairs = zip(out_py, out_cy) if isinstance(out_py, tuple) else [(out_py, out_cy)]
        for a, b in pairs:
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
        print(f"{label:42s} {t_py * 1e3:8.2f}ms {t_cy * 1e3:8.2f}ms {t_py / t_cy:7.1f}x")


if __name__ == "__main__":
    main()
