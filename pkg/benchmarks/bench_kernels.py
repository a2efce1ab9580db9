"""Compare the compiled and numpy kernel backends on the shapes the models use.

    python benchmarks/bench_kernels.py [--repeat N]

Reports the best wall time of each backend per case, the achieved GFLOP/s of
the compiled path (forward: 2*N*F*C*kh*kw*H*W flops), and the speedup.
"""

import argparse
import time

import numpy as np

from carlab.nn import kernels

# (label, input shape (N, C, H, W), filters, kernel)
CASES = [
    ("enc_low conv1", (32, 2, 16, 64), 8, (3, 5)),
    ("enc_high conv1", (32, 2, 256, 64), 8, (3, 5)),
    ("enc_high conv3", (32, 8, 64, 16), 8, (3, 5)),
    ("dec_high out", (64, 8, 256, 64), 2, (3, 5)),
    ("clf high conv2", (32, 8, 128, 32), 8, (3, 11)),
    ("narrow plane", (64, 8, 16, 4), 8, (3, 5)),
]


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(repeat):
    compiled = kernels.get_backend("compiled")
    python = kernels.get_backend("python")
    rng = np.random.default_rng(0)
    header = f"{'case':<16} {'pass':<8} {'python ms':>10} {'compiled ms':>12} {'speedup':>8} {'GFLOP/s':>8}"
    print(header)
    print("-" * len(header))
    for label, shape, F, kernel in CASES:
        N, C, H, W = shape
        x = rng.standard_normal(shape, dtype=np.float32)
        w = rng.standard_normal((F, C, *kernel), dtype=np.float32)
        b = np.zeros(F, dtype=np.float32)
        dy = rng.standard_normal((N, F, H, W), dtype=np.float32)
        flops = 2.0 * N * F * C * kernel[0] * kernel[1] * H * W
        for name, work in (
            ("forward", lambda k: k.conv2d_forward(x, w, b)),
            ("backward", lambda k: k.conv2d_backward(x, w, dy, True)),
        ):
            t_py = best_of(lambda: work(python), repeat)
            t_c = best_of(lambda: work(compiled), repeat)
            gf = (flops if name == "forward" else 2 * flops) / t_c / 1e9
            print(f"{label:<16} {name:<8} {t_py * 1e3:>10.2f} {t_c * 1e3:>12.2f} "
                  f"{t_py / t_c:>7.1f}x {gf:>8.1f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.compiled_available():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    print(f"default backend: {kernels.BACKEND}")
    run(args.repeat)


if __name__ == "__main__":
    main()
