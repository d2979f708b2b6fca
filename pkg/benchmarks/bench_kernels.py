"""Compare the compiled kernels with the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs on shapes taken from the discriminator's first stage at
batch 64 and the best wall time over ``--repeat`` runs is reported. A final
row times one discriminator forward+backward pass with each backend.
"""

from __future__ import annotations

import argparse
import importlib
import json
import os
import subprocess
import sys
import time

import numpy as np

from cocgan import _kernels_py


def _best(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(rng, backends):
    x = rng.standard_normal((64 * 196, 32 * 4)).astype(np.float32)
    g = rng.standard_normal(x.shape).astype(np.float32)
    ln_x = rng.standard_normal((64 * 196, 32)).astype(np.float32)
    sim = rng.standard_normal((64 * 4, 4, 196)).astype(np.float32)
    vals = rng.standard_normal((64 * 4 * 196, 16)).astype(np.float32)
    idx = rng.integers(0, 64 * 4 * 4, size=len(vals))
    ln_state = {id(k): k.layernorm_forward(ln_x, 1e-5) for k in backends}
    return {
        "gelu_forward": lambda k: k.gelu_forward(x),
        "gelu_backward": lambda k: k.gelu_backward(x, g),
        "layernorm_forward": lambda k: k.layernorm_forward(ln_x, 1e-5),
        "layernorm_backward": lambda k: k.layernorm_backward(*ln_state[id(k)], ln_x),
        "segment_sum": lambda k: k.segment_sum(vals, idx, 64 * 4 * 4),
        "argmax_columns": lambda k: k.argmax_columns(sim),
    }


_STEP_SNIPPET = """
import time, numpy as np
from cocgan import models, tensor as T, kernels
d = models.Discriminator(models.default_config('discriminator', wgan=True), np.random.default_rng(0))
x = np.random.default_rng(1).uniform(-1, 1, (64, 28, 28, 1)).astype(np.float32)
def step():
    d.zero_grad(); T.backward(T.mean(d(x)))
step()
best = float("inf")
for _ in range(3):
    t = time.perf_counter()
    step()
    best = min(best, time.perf_counter() - t)
print(kernels.BACKEND, best)
"""


def model_step(pure):
    env = dict(os.environ)
    if pure:
        env["COCGAN_PURE_PYTHON"] = "1"
    else:
        env.pop("COCGAN_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, "-c", _STEP_SNIPPET], env=env, capture_output=True, text=True, check=True)
    backend, seconds = out.stdout.split()
    return backend, float(seconds)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results to this file")
    ap.add_argument("--skip-model", action="store_true", help="skip the full forward+backward comparison")
    args = ap.parse_args(argv)

    try:
        compiled = importlib.import_module("cocgan._kernels")
    except ImportError:
        print("compiled extension not built; only the numpy fallback is available")
        compiled = None

    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':<22}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in kernel_cases(rng, [b for b in (_kernels_py, compiled) if b]).items():
        py = _best(lambda: fn(_kernels_py), args.repeat) * 1e3
        cy = _best(lambda: fn(compiled), args.repeat) * 1e3 if compiled else float("nan")
        rows.append({"kernel": name, "numpy_ms": py, "cython_ms": cy, "speedup": py / cy})
        print(f"{name:<22}{py:>12.2f}{cy:>12.2f}{py / cy:>9.2f}x")
    if not args.skip_model:
        _, py = model_step(pure=True)
        backend, cy = model_step(pure=False)
        rows.append({"kernel": "disc_fwd_bwd_b64", "numpy_ms": py * 1e3, "cython_ms": cy * 1e3,
                     "speedup": py / cy, "backend": backend})
        print(f"{'disc fwd+bwd (b=64)':<22}{py * 1e3:>12.1f}{cy * 1e3:>12.1f}{py / cy:>9.2f}x")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2)
    return rows


if __name__ == "__main__":
    main()
