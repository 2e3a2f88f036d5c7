"""
Benchmark the numba and pure-numpy convolution backends.

Times one forward + backward training step of the full network on a
LOL-sized (400x600) image, and the individual conv kernels, for each
backend. Also checks the two backends agree.

    python benchmarks/bench_kernels.py [--height 400 --width 600 --repeats 5]
"""

import argparse
import time

import numpy as np

from retina_restore import _kernels
from retina_restore.retina_model import init_params
from retina_restore.tensor_core import DepthwiseKernel, depthwise_conv2d, depthwise_conv2d_backward
from retina_restore.training import loss_and_grad


def timed(fn, repeats):
    fn()  # warmup / jit compile
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append((time.perf_counter() - start) * 1000)
    return np.mean(times), np.std(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--height", type=int, default=400)
    ap.add_argument("--width", type=int, default=600)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    low = rng.uniform(0, 0.3, (args.height, args.width, 3)).astype(np.float32)
    high = rng.uniform(0, 1, (args.height, args.width, 3)).astype(np.float32)
    params = init_params(0)
    k5 = DepthwiseKernel(rng.normal(size=(3, 5, 5)).astype(np.float32),
                         rng.normal(size=3).astype(np.float32))
    go = rng.normal(size=low.shape).astype(np.float32)

    print("=" * 72)
    print(f"depthwise conv backends, image {args.height}x{args.width}x3, "
          f"{args.repeats} repeats")
    print("=" * 72)

    results = {}
    for name in _kernels.BACKENDS:
        with _kernels.use_backend(name):
            fwd = timed(lambda: depthwise_conv2d(low, k5), args.repeats)
            bwd = timed(lambda: depthwise_conv2d_backward(low, k5, go), args.repeats)
            step = timed(lambda: loss_and_grad(params, low, high), args.repeats)
            results[name] = (depthwise_conv2d(low, k5), loss_and_grad(params, low, high))
        print(f"\n[{name}]")
        print(f"  conv5x5 forward : {fwd[0]:9.2f} ms +/- {fwd[1]:.2f}")
        print(f"  conv5x5 backward: {bwd[0]:9.2f} ms +/- {bwd[1]:.2f}")
        print(f"  train step      : {step[0]:9.2f} ms +/- {step[1]:.2f}")
        per_run = step[0] * 485 * 20 / 1000 / 60
        print(f"  -> 485 images x 20 epochs ~ {per_run:.1f} min")

    if len(results) == 2:
        (out_a, (loss_a, g_a)), (out_b, (loss_b, g_b)) = results.values()
        print("\nagreement")
        print(f"  forward bit-identical : {np.array_equal(out_a, out_b)}")
        print(f"  loss diff             : {abs(loss_a - loss_b):.3e}")
        print(f"  max grad diff         : {np.max(np.abs(g_a.flatten() - g_b.flatten())):.3e}")


if __name__ == "__main__":
    main()
