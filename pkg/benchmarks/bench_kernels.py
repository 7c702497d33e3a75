"""Time the numba and numpy kernel backends side by side.

Each backend runs in its own interpreter because the backend is fixed at import
time by ``EDGEKT_DISABLE_NUMBA``.  Usage::

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, timeit
import numpy as np
from edgekt import kernels
from edgekt.gradcore import ops
from edgekt.gradcore.tensor import Tensor

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
x = rng.standard_normal((64, 16, 32, 32)).astype(np.float32)
cols = kernels.im2col(x, 3, 3, 1, 1)
acts = np.maximum(rng.standard_normal((64, 64, 8, 8)), 0).astype(np.float32)
w = rng.standard_normal((16, 16, 3, 3)).astype(np.float32) * 0.1

def conv_step():
    xt = Tensor(x, requires_grad=True)
    wt = Tensor(w, requires_grad=True)
    out = ops.conv2d(xt, wt, stride=1, padding=1)
    out.backward(np.ones_like(out.data))

cases = {
    "im2col (shared numpy path)": lambda: kernels.im2col(x, 3, 3, 1, 1),
    "col2im 64x16x32x32 k3": lambda: kernels.col2im(cols, x.shape, 3, 3, 1, 1),
    "zero_counts 64x64x8x8": lambda: kernels.zero_counts(acts),
    "conv2d fwd+bwd": conv_step,
}
out = {"backend": kernels.BACKEND}
for name, fn in cases.items():
    fn()  # warm-up, includes JIT compilation
    out[name] = min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3
print(json.dumps(out))
"""


def run_backend(disable, repeat):
    env = dict(os.environ, EDGEKT_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    fast = run_backend(False, args.repeat)
    slow = run_backend(True, args.repeat)
    print(f"{'kernel':28s} {fast['backend']:>10s} {slow['backend']:>10s}  speedup")
    for name in fast:
        if name == "backend":
            continue
        print(f"{name:28s} {fast[name]:9.2f}ms {slow[name]:9.2f}ms  {slow[name] / fast[name]:6.2f}x")


if __name__ == "__main__":
    main()
