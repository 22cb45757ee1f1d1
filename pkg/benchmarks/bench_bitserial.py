"""Compare the compiled and numpy bit-serial kernels.

Run with ``python benchmarks/bench_bitserial.py [--repeat N]``. Each case
times both backends on the same inputs and checks that they agree. "core"
excludes drawing the read-noise normals, which both backends share and
which dominates the noisy end-to-end time.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from bbnn_imc import kernels

CASES = [
    # (label, positions, rows, cols, sigma)
    ("fc 128x128 noise-free", 1, 128, 128, 0.0),
    ("conv 64 pos noise-free", 64, 72, 128, 0.0),
    ("fc 128x128 read noise", 1, 128, 128, 0.01),
    ("conv 64 pos read noise", 64, 72, 128, 0.01),
]


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def run(repeat: int = 5, seed: int = 0):
    rng = np.random.default_rng(seed)
    rows = []
    for label, p, r, c, sigma in CASES:
        x = rng.integers(-128, 128, size=(p, r))
        w = rng.choice([-1, 0, 1], size=(r, c))
        gp, gn = (w > 0).astype(float), (w < 0).astype(float)
        bits = ((x & 0xFF)[:, None, :] >> np.arange(8)[None, :, None]) & 1
        noise = np.random.default_rng(1).standard_normal(int(bits.sum()) * c * 2) if sigma else np.zeros(0)
        timings, outs = {}, {}
        for name in sorted(kernels.BACKENDS):
            core = kernels.BACKENDS[name]
            fn = lambda: core(x, gp, gn, 8, sigma, noise, 1.0, 0, 1.0)
            timings[name + " core"], outs[name] = _time(fn, repeat)
            fn = lambda: kernels.bitserial_mvm(x, gp, gn, 8, sigma, np.random.default_rng(1), backend=name)
            timings[name + " total"], _ = _time(fn, repeat)
        ref = outs["python"]
        agree = all(np.allclose(o, ref, rtol=0, atol=1e-9) for o in outs.values())
        rows.append((label, timings, agree))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"default backend: {kernels.BACKEND}; available: {', '.join(sorted(kernels.BACKENDS))}")
    for label, timings, agree in run(args.repeat):
        cells = "  ".join(f"{k} {v * 1e3:8.3f} ms" for k, v in sorted(timings.items()))
        speedup = ""
        if "cython core" in timings:
            speedup = f"  core speedup x{timings['python core'] / timings['cython core']:.1f}"
        print(f"{label:26s} {cells}{speedup}  {'agree' if agree else 'MISMATCH'}")


if __name__ == "__main__":
    main()
