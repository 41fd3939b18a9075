"""Compare the compiled and numpy kernels.

    python benchmarks/bench_kernels.py [--repeat 2000]
"""
import argparse
import time

import numpy as np

from sphereflow._kernels import available_backends, get_backend
from sphereflow.conformal import Dilation, bubble
from sphereflow.sphere import build_grid, critical_exponent


def _time(fn, repeat):
    fn()
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def bench_rk4(repeat):
    rows = []
    for n, N in ((3, 64), (4, 128), (4, 256), (10, 64)):
        g = build_grid(n, N)
        f = n * (n - 1.0) * (1.0 + 0.1 * g.nodes)
        u = bubble(Dilation(0.5), g)
        vol0 = float(g.weights @ u ** critical_exponent(n))
        for name in available_backends():
            k = get_backend(name)
            sec = _time(lambda: k.rk4_step(g.lap_off, g.lap_rowsum, g.weights, f, u, n, 1e-6, vol0), repeat)
            rows.append((f"rk4_step n={n} N={N}", name, sec))
    return rows


def bench_morse(repeat):
    rows = []
    for n in (4, 6):
        for name in available_backends():
            k = get_backend(name)
            sec = _time(lambda: k.morse_enumerate(n, 6, 5), max(1, repeat // 200))
            rows.append((f"morse_enumerate n={n}", name, sec))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()
    rows = bench_rk4(args.repeat) + bench_morse(args.repeat)
    base = {}
    print(f"{'kernel':28s} {'backend':8s} {'time':>12s} {'speedup':>8s}")
    for label, name, sec in rows:
        if name == "python":
            base[label] = sec
        speed = base.get(label, np.nan) / sec
        print(f"{label:28s} {name:8s} {sec * 1e6:10.1f}us {speed:8.2f}")


if __name__ == "__main__":
    main()
