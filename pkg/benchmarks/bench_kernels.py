"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--step]

Kernel timings use desk-scale shapes (18 patches of 64x64). ``--step``
also times one full training step under each backend, in a subprocess
so that the backend choice made at import is honoured.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from tangentdepth import _kernels_py

try:
    from tangentdepth import _ckernels
except ImportError:
    _ckernels = None

STEP_SNIPPET = """
import time
import numpy as np
from tangentdepth import kernels
from tangentdepth.geometry import build_patch_layout
from tangentdepth.model import ModelConfig, init_params
from tangentdepth.pipeline import TrainingSet, training_step
from tangentdepth.scenes import default_scenes

cfg = ModelConfig()
layout = build_patch_layout(patch_res=cfg.patch_res)
data = TrainingSet.render(default_scenes(1), layout, 64, cfg.np_dtype)
params = init_params(cfg, 0)
training_step(data.patches[:1], data.gt[:1], params, cfg, data.tables, 2)
best = float("inf")
for _ in range({repeat}):
    t0 = time.perf_counter()
    training_step(data.patches[:1], data.gt[:1], params, cfg, data.tables, 2)
    best = min(best, time.perf_counter() - t0)
print(kernels.BACKEND, best)
"""


def cases(rng):
    n, r, c = 18, 64, 3
    src = rng.normal(size=(c, 64 * 128)).astype(np.float32)
    idx = rng.integers(0, src.shape[1], (n * r * r, 4))
    w = rng.dirichlet(np.ones(4), n * r * r)
    g = rng.normal(size=(c, n * r * r)).astype(np.float32)
    yield "gather4 (extract 18x64x64)", "gather4", (src, idx, w)
    yield "scatter4 (its adjoint)", "scatter4", (g, idx, w, src.shape[1])
    x = rng.normal(size=(18, 16, 66, 66)).astype(np.float32)
    yield "im2col 3x3 18x16x64x64", "im2col", (x, 3, 1, 64, 64)
    cols = rng.normal(size=(18, 64, 64, 16 * 9)).astype(np.float32)
    yield "col2im 3x3 18x16x64x64", "col2im", (cols, 16, 66, 66, 3, 1)


def best_of(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def time_step(pure: bool, repeat: int) -> float:
    env = dict(os.environ)
    env.pop("TANGENTDEPTH_PURE", None)
    if pure:
        env["TANGENTDEPTH_PURE"] = "1"
    out = subprocess.run(
        [sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)],
        env=env, capture_output=True, text=True, check=True,
    )
    return float(out.stdout.split()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--step", action="store_true", help="also time a full training step per backend")
    args = ap.parse_args()

    if _ckernels is None:
        print("compiled kernels are not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<30} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for label, name, call in cases(rng):
        py = best_of(getattr(_kernels_py, name), call, args.repeat)
        if _ckernels is None:
            print(f"{label:<30} {py * 1e3:>10.2f} {'-':>10} {'-':>8}")
            continue
        cy = best_of(getattr(_ckernels, name), call, args.repeat)
        print(f"{label:<30} {py * 1e3:>10.2f} {cy * 1e3:>10.2f} {py / cy:>7.2f}x")

    if args.step:
        py = time_step(True, args.repeat)
        line = f"{'training step (2 passes)':<30} {py * 1e3:>10.1f}"
        if _ckernels is not None:
            cy = time_step(False, args.repeat)
            line += f" {cy * 1e3:>10.1f} {py / cy:>7.2f}x"
        print(line)


if __name__ == "__main__":
    main()
