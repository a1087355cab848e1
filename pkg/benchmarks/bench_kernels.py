"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N] [--size 64]

Times each kernel on U-net-sized inputs, then one full optimization iteration
of the default configuration, under every available backend.  Also checks
that the backends agree.
"""

import argparse
import time

import numpy as np

from dipmatte import kernels
from dipmatte.engine import EngineConfig, build_networks, run_networks, total_loss
from dipmatte.optim import AdamState, adam_step
from dipmatte.synth import synth_case
from dipmatte.tensor import Tensor, reset_tape


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(size, rng):
    x = rng.random((36, size, size), dtype=np.float32)
    cols = kernels._numpy_kernels.im2col(x, 3, 1)
    small = rng.random((64, size // 2, size // 2), dtype=np.float32)
    up = rng.random((64, size, size), dtype=np.float32)
    rgb = rng.random((3, size, size), dtype=np.float32)
    return {
        f"im2col 36x{size}x{size} k3": lambda: kernels.im2col(x, 3, 1),
        f"im2col 36x{size}x{size} k3 s2": lambda: kernels.im2col(x, 3, 2),
        f"col2im 36x{size}x{size} k3": lambda: kernels.col2im(cols, 36, size, size, 3, 1),
        f"upsample2x 64x{size // 2}x{size // 2}": lambda: kernels.upsample2x(small),
        f"upsample2x_adjoint 64x{size}x{size}": lambda: kernels.upsample2x_adjoint(up),
        f"spatial_grad_l1 3x{size}x{size}": lambda: kernels.spatial_grad_l1(rgb),
        f"spatial_grad_l1_adjoint 3x{size}x{size}": lambda: kernels.spatial_grad_l1_adjoint(rgb, rgb),
    }


def iteration_fn(size):
    case = synth_case("disk", (size, size), 4, seed=0)
    cfg = EngineConfig()
    nets = build_networks(cfg, (size, size))
    params = [p for net in nets.values() for p in net.parameters()]
    state = AdamState.zeros_like(params)
    image = Tensor(case.image)

    def step():
        reset_tape()
        for p in params:
            p.grad = None
        total, _ = total_loss(*run_networks(nets), image, case.trimap)
        total.backward()
        adam_step(params, [p.grad for p in params], state, lr=cfg.lr)

    return step


def check_agreement(size, rng):
    x = rng.random((5, size, size))
    ref = {}
    for name in sorted(kernels.BACKENDS):
        with kernels.use_backend(name):
            ref[name] = (kernels.im2col(x, 3, 2), kernels.spatial_grad_l1(x))
    base = ref.pop("numpy")
    for name, outs in ref.items():
        for a, b in zip(base, outs):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
        print(f"{name} agrees with numpy")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--iter-repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    names = sorted(kernels.BACKENDS)
    check_agreement(16, rng)

    results = {}
    for backend in names:
        with kernels.use_backend(backend):
            for label, fn in kernel_cases(args.size, rng).items():
                results.setdefault(label, {})[backend] = best_of(fn, args.repeat)
            label = f"full iteration (default nets, {args.size}x{args.size})"
            results.setdefault(label, {})[backend] = best_of(iteration_fn(args.size), args.iter_repeat)

    width = max(len(k) for k in results)
    header = f"{'case':{width}s}" + "".join(f"{n + ' ms':>14s}" for n in names)
    if len(names) > 1:
        header += f"{'speedup':>10s}"
    print(header)
    for label, by_backend in results.items():
        row = f"{label:{width}s}" + "".join(f"{1e3 * by_backend[n]:14.3f}" for n in names)
        if "cython" in by_backend:
            row += f"{by_backend['numpy'] / by_backend['cython']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
