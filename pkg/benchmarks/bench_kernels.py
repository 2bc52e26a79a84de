"""Time each hot kernel under the numpy and numba backends.

    python benchmarks/bench_kernels.py [--repeat 5]

The first numba call (JIT compile or cache load) is excluded from timings.
"""

import argparse
import time

import numpy as np

from graphdiar import _kernels
from graphdiar.losses import LossConfig
from graphdiar.simulator import SimConfig, simulate_session
from graphdiar.trainer import TrainConfig, train


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n):
    rng = np.random.default_rng(0)
    vals = rng.uniform(-1, 1, n * (n - 1) // 2)
    grad = rng.standard_normal(150)
    lo, delta = -1.0, 2.0 / 149
    ua, ub = rng.standard_normal((n, 64)), rng.standard_normal((n, 64))
    bh, wo = rng.standard_normal(64), rng.standard_normal(64)
    g = rng.standard_normal((n, n))
    pts = rng.standard_normal((n, 10))
    centers = pts[:10].copy()
    return {
        "soft_histogram": lambda k: k.soft_histogram(vals, lo, delta, 150),
        "soft_histogram_grad": lambda k: k.soft_histogram_grad(vals, grad, lo, delta, 150),
        "fc_pair_matrix": lambda k: k.fc_pair_matrix(ua, ub, bh, wo, 0.1),
        "fc_pair_backward": lambda k: k.fc_pair_backward(ua, ub, bh, wo, 0.1, g),
        "kmeans_lloyd": lambda k: k.kmeans_lloyd(pts, centers, 300, 1e-6),
    }


def training_epoch(impl):
    data = [simulate_session(SimConfig(seed=1), i) for i in range(10)]
    cfg = TrainConfig(epochs=1, lr_drop_epoch=1, loss=LossConfig(kind="bce"), scorer="fc")

    def run():
        saved = _kernels.active
        _kernels.active = impl
        try:
            train(data, cfg)
        finally:
            _kernels.active = saved

    return run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=300, help="segments per session")
    args = ap.parse_args()
    impls = [_kernels.numpy_impl] + ([_kernels.numba_impl] if _kernels.numba_impl else [])
    print(f"{'kernel':<22}" + "".join(f"{i.name:>12}" for i in impls) + ("     speedup" if len(impls) == 2 else ""))
    rows = [(name, [lambda fn=fn, i=i: fn(i) for i in impls]) for name, fn in cases(args.n).items()]
    rows.append(("fc+bce train epoch", [training_epoch(i) for i in impls]))
    for name, fns in rows:
        ts = [best_of(fn, args.repeat) for fn in fns]
        line = f"{name:<22}" + "".join(f"{1e3 * t:>10.2f}ms" for t in ts)
        if len(ts) == 2:
            line += f"{ts[0] / ts[1]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
