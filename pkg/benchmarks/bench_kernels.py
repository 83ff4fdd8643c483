"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from lightloc import kernels
from lightloc.geometry import random_pose


def workloads(seed: int = 0):
    rng = np.random.default_rng(seed)
    poses = [random_pose(rng, 5.0) for _ in range(1024)]
    R = np.ascontiguousarray([p.rotation for p in poses])
    t = np.ascontiguousarray([p.translation for p in poses])
    src = rng.uniform(-10, 10, (300, 3))
    dst = src @ poses[0].rotation.T + poses[0].translation
    pts = rng.normal(size=(5000, 2)) * 50
    centers = rng.normal(size=(100, 2)) * 50
    return {
        "score_hypotheses 1024x300": lambda b: b.score_hypotheses(R, t, src, dst, 0.25),
        "assign_nearest 5000x100": lambda b: b.assign_nearest(pts, centers),
    }


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["compiled"] = kernels.compiled_backend
    else:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':28s} " + " ".join(f"{name:>12s}" for name in backends) + "     speedup")
    for label, fn in workloads().items():
        best = {name: min(timeit.repeat(lambda: fn(b), number=3, repeat=args.repeat)) / 3
                for name, b in backends.items()}
        speed = f"{best['python'] / best['compiled']:10.1f}x" if "compiled" in best else ""
        print(f"{label:28s} " + " ".join(f"{best[n] * 1e3:10.2f}ms" for n in backends) + speed)


if __name__ == "__main__":
    main()
