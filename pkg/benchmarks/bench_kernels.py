"""Wall-clock comparison of the numba and numpy kernel backends.

Usage: ``PYTHONPATH=src python3 benchmarks/bench_kernels.py [--repeats N]``

Both backends are imported directly, so the ``BMDRKIT_DISABLE_NUMBA`` flag
does not matter here. The first numba call (JIT compilation) is excluded.
"""

import argparse
import time

import numpy as np

from bmdrkit.channel import MimoSystem
from bmdrkit.coding import builtin_code, encode
from bmdrkit.kernels import _numba, _numpy
from bmdrkit.numerics import RngStream, qr_decompose, real_embed_matrix


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kbest_case(B=2000, K=32):
    system = MimoSystem.uniform(16, 4)
    r = RngStream(0)
    _, R = qr_decompose(real_embed_matrix(r.complex_normal((16, 4)) * 0.5))
    amps, sizes, _, _ = system.level_tables
    ybar = r.standard_normal((B, 8))
    return lambda mod: mod.kbest_search(ybar, R, amps, sizes, K), f"K-best K={K}, {B} vectors, 16x4 4-QAM"


def bp_case(n_words=50):
    H = builtin_code("ldpc648")
    r = RngStream(1)
    words = [encode(H, r.bits(432)) for _ in range(n_words)]
    llrs = [2.0 * ((2.0 * c - 1.0) + 0.8 * r.standard_normal(648)) for c in words]

    def run(mod):
        for llr in llrs:
            mod.bp_decode(llr, H.check_ptr, H.edge_var, H.var_ptr, H.var_edges, 50)

    return run, f"BP (648,432), {n_words} codewords"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    print(f"{'kernel':42s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speed-up':>9s}")
    for fn, label in (kbest_case(), bp_case()):
        fn(_numba)  # compile
        t_np = best_of(lambda: fn(_numpy), args.repeats)
        t_nb = best_of(lambda: fn(_numba), args.repeats)
        print(f"{label:42s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
