"""Compare the numba and pure-numpy kernel backends.

Kernel timings call both variants in-process. The model timings run a child
interpreter per backend because the backend is fixed at import time by
PAMWCNN_DISABLE_NUMBA.

    python3 benchmarks/bench_backends.py [--repeat 5] [--size 64]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from pamwcnn import _accel

MODEL_SNIPPET = """
import json, sys, timeit
import numpy as np
from pamwcnn import BACKEND, mwcnn
from pamwcnn.tensor_core import mse_loss
size, repeat = int(sys.argv[1]), int(sys.argv[2])
params = mwcnn.build_model(mwcnn.DESK_CONFIG, 0)
x = np.random.default_rng(0).uniform(0, 1, (8, 1, size, size)).astype(np.float32)
def step():
    out, rec = mwcnn.forward_with_cache(params, x)
    _, g = mse_loss(out, x)
    mwcnn.backward_from_cache(params, rec, g)
step()
fwd = min(timeit.repeat(lambda: mwcnn.forward(params, x), number=1, repeat=repeat))
both = min(timeit.repeat(step, number=1, repeat=repeat))
print(json.dumps({"backend": BACKEND, "forward": fwd, "train_step": both}))
"""


def best(fn, repeat, number=10):
    fn()  # compile / warm caches
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def kernel_rows(size, repeat):
    rng = np.random.default_rng(0)
    rows = []
    for channels in (4, 16, 64):
        x = rng.standard_normal((8, channels, size, size)).astype(np.float32)
        s = rng.standard_normal((8, 4 * channels, size // 2, size // 2)).astype(np.float32)
        cases = [
            ("im2col", _accel.im2col_numpy, _accel.im2col_numba, x),
            ("haar analysis", _accel.haar_analysis_numpy, _accel.haar_analysis_numba, x),
            ("haar synthesis", _accel.haar_synthesis_numpy, _accel.haar_synthesis_numba, s),
        ]
        for name, np_fn, nb_fn, arg in cases:
            assert np.array_equal(np_fn(arg), nb_fn(arg)), name
            t_np = best(lambda: np_fn(arg), repeat)
            t_nb = best(lambda: nb_fn(arg), repeat)
            rows.append((f"{name} c={channels}", t_np, t_nb))
    return rows


def model_row(size, repeat):
    out = {}
    for flag in ("1", "0"):
        env = dict(os.environ, PAMWCNN_DISABLE_NUMBA=flag, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1")
        res = subprocess.run(
            [sys.executable, "-c", MODEL_SNIPPET, str(size), str(repeat)],
            env=env, capture_output=True, text=True, check=True,
        )
        rec = json.loads(res.stdout)
        out[rec["backend"]] = rec
    return [
        ("desk model forward", out["numpy"]["forward"], out["numba"]["forward"]),
        ("desk model train step", out["numpy"]["train_step"], out["numba"]["train_step"]),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=64, help="spatial size of the batch-8 inputs")
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    rows = kernel_rows(args.size, args.repeat) + model_row(args.size, args.repeat)
    print(f"{'case':<26} {'numpy [ms]':>11} {'numba [ms]':>11} {'speedup':>8}")
    for name, t_np, t_nb in rows:
        print(f"{name:<26} {t_np * 1e3:>11.3f} {t_nb * 1e3:>11.3f} {t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
