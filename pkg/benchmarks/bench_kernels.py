"""Time the numpy and numba GRU kernels side by side.

    python benchmarks/bench_kernels.py [--repeat 5] [--sizes 32x8x10,256x21x16,...]

Sizes are BATCHxSTEPSxCELL; the input width is fixed at 20 one-hot slots.
Numba compile time is paid once in a warm-up call and reported separately.
Both kernels must agree to 1e-10 or the row is flagged.
"""

import argparse
import time

import numpy as np

from grusvm import _kernels
from grusvm.gru import GruParams

DEFAULT_SIZES = "32x8x10,256x21x16,256x21x64,256x21x256,1024x21x64"
WIDTH = 20


def make_inputs(B, T, H, rng):
    gru = GruParams.init(H, WIDTH, rng)
    X = np.zeros((B, T, WIDTH))
    X[np.arange(B)[:, None], np.arange(T)[None, :], rng.integers(0, WIDTH, (B, T))] = 1.0
    w = (gru.W_z, gru.W_r, gru.W_h, gru.b_z, gru.b_r, gru.b_h)
    return X, w, rng.normal(size=(B, H))


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench(B, T, H, backend, repeat, rng):
    fwd, bwd = _kernels.get(backend)
    X, w, dh = make_inputs(B, T, H, rng)
    Wz, Wr, Wh = w[:3]
    t0 = time.perf_counter()
    tr = fwd(X, *w)
    bwd(X, Wz, Wr, Wh, *tr, dh)
    first = time.perf_counter() - t0
    tf, tr = best_of(lambda: fwd(X, *w), repeat)
    tb, grads = best_of(lambda: bwd(X, Wz, Wr, Wh, *tr, dh), repeat)
    return first, tf, tb, tr, grads


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", default=DEFAULT_SIZES)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = ["numpy"] + (["numba"] if _kernels.HAS_NUMBA else [])
    if len(backends) == 1:
        print("numba unavailable (or disabled by GRUSVM_DISABLE_NUMBA); timing numpy only")
    print(f"{'size':>14} {'backend':>7} {'first(s)':>9} {'fwd(ms)':>9} {'bwd(ms)':>9} "
          f"{'speedup':>8}")
    for spec in args.sizes.split(","):
        B, T, H = (int(v) for v in spec.split("x"))
        rows = {}
        for be in backends:
            rows[be] = bench(B, T, H, be, args.repeat, np.random.default_rng(args.seed))
        base = rows["numpy"][1] + rows["numpy"][2]
        for be, (first, tf, tb, tr, grads) in rows.items():
            flag = ""
            if be != "numpy":
                ref_tr, ref_g = rows["numpy"][3], rows["numpy"][4]
                err = max(max(np.abs(a - b).max() for a, b in zip(tr, ref_tr)),
                          max(np.abs(a - b).max() for a, b in zip(grads, ref_g)))
                flag = "" if err < 1e-10 else f"  MISMATCH {err:.1e}"
            print(f"{spec:>14} {be:>7} {first:9.3f} {tf * 1e3:9.2f} {tb * 1e3:9.2f} "
                  f"{base / (tf + tb):7.2f}x{flag}")


if __name__ == "__main__":
    main()
