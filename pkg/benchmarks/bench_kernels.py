"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from gatlab import kernels
from gatlab.dictlookup import gen_dataset
from gatlab.training import TrainConfig, train_model


def cases(rng):
    n, e, width = 2048, 20480, 128
    src = rng.integers(0, n, e)
    dst = np.sort(rng.integers(0, n, e))
    x = rng.standard_normal((n, width))
    y = rng.standard_normal((n, width))
    w = rng.random(e)
    vec = rng.standard_normal(width)
    grad = rng.standard_normal(e)
    m = rng.standard_normal((16, 16))
    return {
        "segment_max": lambda: kernels.segment_max(w, dst, n),
        "segment_sum": lambda: kernels.segment_sum(x[src], dst, n),
        "weighted_gather_sum": lambda: kernels.weighted_gather_sum(w, x, src, dst, n),
        "edge_dot": lambda: kernels.edge_dot(x, y, dst, src),
        "gatv2_scores": lambda: kernels.gatv2_scores(x, y, vec, vec, dst, src, 0.2),
        "gatv2_scores_backward": lambda: kernels.gatv2_scores_backward(
            x, y, vec, vec, dst, src, 0.2, grad),
        "jacobi_16x16": lambda: kernels.jacobi_orthogonalize(
            m.T.copy(), np.eye(16), 1e-14, 60),
    }


def train_epochs(kind, epochs):
    data = gen_dataset(10, 1000, seed=0)
    train_model(TrainConfig(kind=kind, max_epochs=epochs), data)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--epochs", type=int, default=3)
    args = parser.parse_args()

    backends = ["python"]
    try:
        kernels.use_backend("cython")
        backends.insert(0, "cython")
    except ImportError:
        print("compiled extension not built; timing the numpy fallback only")

    timings = {}
    for backend in backends:
        kernels.use_backend(backend)
        for name, fn in cases(np.random.default_rng(0)).items():
            timings.setdefault(name, {})[backend] = min(
                timeit.repeat(fn, number=1, repeat=args.repeat))
        for kind in ("gat", "gatv2"):
            name = f"train {kind} x{args.epochs} epochs (k=10, 1000 graphs)"
            timings.setdefault(name, {})[backend] = min(
                timeit.repeat(lambda: train_epochs(kind, args.epochs), number=1, repeat=1))

    print(f"{'kernel':<46}" + "".join(f"{b:>12}" for b in backends) + "     speedup")
    for name, row in timings.items():
        cells = "".join(f"{row[b] * 1e3:>10.2f}ms" for b in backends)
        ratio = row["python"] / row["cython"] if "cython" in row else float("nan")
        print(f"{name:<46}{cells}{ratio:>11.1f}x")


if __name__ == "__main__":
    main()
