"""Time the numba kernels against the pure-numpy fallbacks.

Run:  python benchmarks/benchmark_backends.py

Covers the conv forward/backward pair on the shapes the training loop
actually hits (large encoder maps, channel-heavy denoiser maps, tiny
single-frame collection encodes), the pooling pair, and one full
diffusion-model update step per backend (the latter via subprocesses so each
backend is selected at import time).
"""

import json
import os
import subprocess
import sys
import time

import numpy as np

SHAPES = [
    ("encoder 32px batch 80", (80, 16, 34, 34), (16, 16, 3, 3)),
    ("encoder 16px batch 80", (80, 16, 18, 18), (16, 16, 3, 3)),
    ("denoiser 4px batch 16", (16, 80, 6, 6), (64, 80, 3, 3)),
    ("single frame collect", (1, 3, 34, 34), (8, 3, 3, 3)),
]


def time_fn(fn, *args, reps=20):
    fn(*args)  # warm (JIT compile, page faults)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - t0) / reps * 1e3


def bench_kernels():
    from diffwm import kernels as K
    from diffwm.backend import active_backend

    rng = np.random.default_rng(0)
    print(f"active backend: {active_backend()}")
    header = f"{'case':26s} {'fwd numba':>10s} {'fwd numpy':>10s} {'bwd numba':>10s} {'bwd numpy':>10s}"
    print(header)
    print("-" * len(header))
    for name, xshape, wshape in SHAPES:
        xp = rng.normal(size=xshape)
        w = rng.normal(size=wshape)
        g = rng.normal(size=K.conv_fwd_np(xp, w).shape)
        row = {"case": name}
        if active_backend() == "numba":
            row["fwd_nb"] = time_fn(K.conv_fwd_nb, xp, w)
            row["bwd_nb"] = time_fn(K.conv_bwd_nb, xp, w, g)
        else:
            row["fwd_nb"] = float("nan")
            row["bwd_nb"] = float("nan")
        row["fwd_np"] = time_fn(K.conv_fwd_np, xp, w)
        row["bwd_np"] = time_fn(K.conv_bwd_np, xp, w, g)
        print(f"{name:26s} {row['fwd_nb']:9.2f}ms {row['fwd_np']:9.2f}ms "
              f"{row['bwd_nb']:9.2f}ms {row['bwd_np']:9.2f}ms")
    x = rng.normal(size=(32, 16, 32, 32))
    if active_backend() == "numba":
        t_nb = time_fn(lambda: K.maxpool2x2_nb(x))
        print(f"{'maxpool 32px batch 32':26s} {t_nb:9.2f}ms "
              f"{time_fn(lambda: K.maxpool2x2_np(x)):9.2f}ms")
    else:
        print(f"{'maxpool 32px batch 32':26s} {'n/a':>11s} "
              f"{time_fn(lambda: K.maxpool2x2_np(x)):9.2f}ms")


def bench_train_step(backend: str) -> float:
    """One diffusion-model update step under the given backend (fresh
    process so the backend choice applies)."""
    code = (
        "import time, numpy as np\n"
        "from diffwm.config import Config\n"
        "from diffwm.trainer import Trainer\n"
        "tr = Trainer(Config(profile='desk'))\n"
        "tr.collect_experience(60)\n"
        "tr.diffusion_step()\n"
        "t0 = time.perf_counter()\n"
        "for _ in range(5): tr.diffusion_step()\n"
        "print((time.perf_counter() - t0) / 5 * 1e3)\n"
    )
    env = dict(os.environ, DIFFWM_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", code], capture_output=True,
                         text=True, env=env)
    if out.returncode != 0:
        raise RuntimeError(out.stderr)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    bench_kernels()
    print()
    results = {}
    for backend in ("numba", "numpy"):
        ms = bench_train_step(backend)
        results[backend] = ms
        print(f"diffusion-model update step [{backend}]: {ms:.0f} ms")
    print(f"speedup numba over numpy: {results['numpy'] / results['numba']:.2f}x")
    print(json.dumps(results))


if __name__ == "__main__":
    main()
