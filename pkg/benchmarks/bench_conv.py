"""Compiled vs numpy convolution kernels, plus one full generator step.

    python3 benchmarks/bench_conv.py [--repeat N]

Prints the median time per call for each backend and the speed-up. The
generator step is timed by reloading the package with SEGAN_PURE_PYTHON set.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from segan._kernels import BACKENDS

# (batch, c_in, side, c_out, kernel, stride): shapes that occur in training
SHAPES = [
    (4, 1, 32, 8, 2, 1),
    (4, 8, 32, 8, 6, 1),
    (4, 16, 16, 8, 4, 1),
    (4, 8, 32, 8, 3, 2),
    (4, 32, 8, 32, 3, 1),
]

STEP_SNIPPET = """
import time, numpy as np
from segan.config import TrainConfig
from segan.trainer import SEGANTrainer, prepare_pairs
from segan.phantoms import generate_phantoms
from segan._kernels import BACKEND
cfg = TrainConfig()
x, zf = prepare_pairs(generate_phantoms(8, 32, 7), cfg, 0)
tr = SEGANTrainer(cfg, x, zf)
tr.step()
t = time.perf_counter()
for _ in range({n}):
    tr.step()
print(BACKEND, (time.perf_counter() - t) / {n})
"""


def bench_kernel(mod, shape, repeat):
    B, C, S, O, k, s = shape
    rng = np.random.default_rng(0)
    x = rng.standard_normal((B, C, S + k - 1, S + k - 1))
    w = rng.standard_normal((O, C, k, k))
    y = mod.conv2d_forward(x, w, s)
    g = rng.standard_normal(y.shape)
    fwd = timeit.repeat(lambda: mod.conv2d_forward(x, w, s), number=5, repeat=repeat)
    bwd = timeit.repeat(lambda: mod.conv2d_backward(x, w, g, s), number=5, repeat=repeat)
    return np.median(fwd) / 5, np.median(bwd) / 5


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--steps", type=int, default=5, help="training iterations per backend (0 skips)")
    a = ap.parse_args()
    if "compiled" not in BACKENDS:
        sys.exit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    print(f"{'shape (B,C,S,O,k,s), ms':<26}{'py fwd':>10}{'ext fwd':>10}{'x':>6}{'py bwd':>10}{'ext bwd':>10}{'x':>6}")
    for shape in SHAPES:
        pf, pb = bench_kernel(BACKENDS["python"], shape, a.repeat)
        cf, cb = bench_kernel(BACKENDS["compiled"], shape, a.repeat)
        print(f"{str(shape):<26}{pf * 1e3:>10.3f}{cf * 1e3:>10.3f}{pf / cf:>6.2f}"
              f"{pb * 1e3:>10.3f}{cb * 1e3:>10.3f}{pb / cb:>6.2f}")
    if a.steps:
        print("\nfull training iteration (1 D step + 1 G step, batch 4, 32x32):")
        for pure in ("0", "1"):
            env = dict(os.environ, SEGAN_PURE_PYTHON=pure)
            out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(n=a.steps)], env=env,
                                 capture_output=True, text=True, check=True).stdout.split()
            print(f"  {out[0]:<9} {float(out[1]):.3f} s/iter")


if __name__ == "__main__":
    main()
