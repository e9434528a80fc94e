"""Compare the numba and numpy kernel backends.

Times the batched loss+gradient kernel (the training hot loop body) and
the batched prediction kernel on the default-shaped workload, then a
short end-to-end training run per backend.

Usage: python benchmarks/bench_kernels.py [--windows N] [--hidden H]
"""

import argparse
import os
import time

import numpy as np

from synwatch import kernels
from synwatch.lstm import TrainConfig, init_params, train
from synwatch.pipeline import WindowSet


def time_callable(fn, args, repeat=200):
    fn(*args)  # warmup (and JIT compile on the numba path)
    best = float("inf")
    for _ in range(5):
        start = time.perf_counter()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / repeat)
    return best


def bench_kernels(n_windows, hidden, lag=3):
    rng = np.random.default_rng(0)
    params = init_params(lag, hidden, rng_seed=0)
    x = rng.uniform(0, 1, size=(n_windows, lag))
    y = rng.uniform(0, 1, size=n_windows)
    h0 = np.zeros(hidden)
    c0 = np.zeros(hidden)
    grad_args = (x, y, h0, c0) + params.arrays() + (params.b_y,)
    pred_args = (x, h0, c0) + params.arrays() + (params.b_y,)

    rows = []
    for name, predict, grads in [
            ("numpy", kernels.predict_batch_numpy, kernels.loss_and_grads_numpy),
            ("numba", kernels.predict_batch_numba, kernels.loss_and_grads_numba)]:
        if grads is None:
            print(f"{name}: unavailable")
            continue
        t_pred = time_callable(predict, pred_args)
        t_grad = time_callable(grads, grad_args)
        rows.append((name, t_pred, t_grad))

    print(f"\nkernel timings ({n_windows} windows, lag {lag}, "
          f"hidden {hidden}; best of 5 x 200 calls)")
    print(f"{'backend':<8} {'predict_batch':>14} {'loss_and_grads':>15}")
    for name, t_pred, t_grad in rows:
        print(f"{name:<8} {t_pred * 1e6:>11.1f} us {t_grad * 1e6:>12.1f} us")
    if len(rows) == 2:
        print(f"{'speedup':<8} {rows[0][1] / rows[1][1]:>13.2f}x "
              f"{rows[0][2] / rows[1][2]:>14.2f}x")
    return rows


def bench_training(n_windows, hidden, epochs=300, lag=3):
    rng = np.random.default_rng(1)
    values = rng.uniform(0, 1, size=n_windows + lag)
    inputs = np.lib.stride_tricks.sliding_window_view(values, lag)[:-1]
    windows = WindowSet(lag=lag, inputs=np.ascontiguousarray(inputs),
                        targets=values[lag:].copy(),
                        origin_steps=np.arange(lag - 1, len(values) - 1))
    config = TrainConfig(epochs=epochs, hidden_dim=hidden, lag=lag, rng_seed=0)

    print(f"\ntraining run ({epochs} epochs, {n_windows} windows)")
    for backend in kernels.available_backends()[::-1]:
        os.environ["SYNWATCH_BACKEND"] = backend
        train(config, windows)  # warmup/compile outside the timed run
        start = time.perf_counter()
        _, report = train(config, windows)
        wall = time.perf_counter() - start
        print(f"{backend:<8} {wall:.3f} s "
              f"({wall / epochs * 1e3:.3f} ms/epoch)")
    os.environ.pop("SYNWATCH_BACKEND", None)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--windows", type=int, default=2000)
    parser.add_argument("--hidden", type=int, default=23)
    parser.add_argument("--epochs", type=int, default=300)
    args = parser.parse_args()

    print(f"available backends: {', '.join(kernels.available_backends())}")
    bench_kernels(args.windows, args.hidden)
    bench_training(args.windows, args.hidden, args.epochs)


if __name__ == "__main__":
    main()
