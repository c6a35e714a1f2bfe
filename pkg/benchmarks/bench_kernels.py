"""Time the compiled and numpy backends of the fusion kernels.

    python3 benchmarks/bench_kernels.py [--batch 256] [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from mrrf.kernels import available_backends

SHAPES = [(5, 5, 5), (9, 9, 9), (3, 17, 9), (17, 17, 17)]


def bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'dims':>12} {'kernel':>8} " + " ".join(f"{n:>10}" for n in backends) + "   speedup")
    for dims in SHAPES:
        vecs = [rng.normal(size=(args.batch, n)) for n in dims]
        g = rng.normal(size=(args.batch, int(np.prod(dims))))
        for kernel in ("forward", "adjoint"):
            times = {}
            for name, mod in backends.items():
                if kernel == "forward":
                    times[name] = bench(lambda: mod.outer_rows(vecs), args.repeat)
                else:
                    times[name] = bench(lambda: mod.outer_rows_adjoint(g, vecs), args.repeat)
            speed = (times["python"] / times["cython"]) if "cython" in times else float("nan")
            cells = " ".join(f"{times[n] * 1e3:>8.3f}ms" for n in backends)
            print(f"{'x'.join(map(str, dims)):>12} {kernel:>8} {cells}   {speed:6.2f}x")


if __name__ == "__main__":
    main()
