"""Compare the numba and pure-numpy conv kernel backends.

Run both variants:

    python3 benchmarks/bench_kernels.py
    BASISTTS_BACKEND=numpy python3 benchmarks/bench_kernels.py

or let the script spawn its own numpy-mode subprocess (default) and print
the side-by-side table.
"""

import os
import subprocess
import sys
import time

import numpy as np

SHAPES = [
    (32, 16, 1, 4),     # first desk layer
    (16, 8, 4, 8),
    (80, 64, 1, 32),    # first paper-scale layer
    (40, 32, 32, 32),
]
REPEATS = 50


def bench() -> None:
    from basistts import kernels

    backend = "numba" if kernels.USE_NUMBA else "numpy"
    rng = np.random.default_rng(0)
    print(f"backend={backend}")
    for h, w, cin, cout in SHAPES:
        x = rng.normal(size=(h, w, cin))
        k = rng.normal(size=(3, 3, cin, cout))
        g = rng.normal(size=kernels.conv2d_out_shape(h, w) + (cout,))
        kernels.conv2d_forward(x, k)  # jit warmup outside the timer
        kernels.conv2d_backward_x(g, k, x.shape)
        kernels.conv2d_backward_w(g, x, k.shape)
        t0 = time.perf_counter()
        for _ in range(REPEATS):
            kernels.conv2d_forward(x, k)
            kernels.conv2d_backward_x(g, k, x.shape)
            kernels.conv2d_backward_w(g, x, k.shape)
        dt = (time.perf_counter() - t0) / REPEATS * 1e6
        print(f"  {h}x{w}x{cin} -> {cout}: {dt:8.1f} us per fwd+bwd")


if __name__ == "__main__":
    bench()
    if os.environ.get("BASISTTS_BACKEND", "numba") != "numpy":
        env = dict(os.environ, BASISTTS_BACKEND="numpy")
        subprocess.run([sys.executable, __file__], env=env, check=True)
