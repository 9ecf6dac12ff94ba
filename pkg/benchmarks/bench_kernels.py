"""Time the numba and numpy conv kernel backends on training-shaped problems.

Run from the repo root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeats 20 --batch 8

The numba functions are compiled (cache=True) on first call, so each case is
warmed before timing. Both backends are checked against each other to 1e-10
before their timings are reported.
"""

import argparse
import time

import numpy as np

from wavebridge import kernels


def _time(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(name, x, w, stride, dilation, transpose, repeats):
    impls = {b: kernels.get_impl(b) for b in kernels.available_backends()}
    if transpose:
        calls = {
            "fwd": lambda t: (t["convt1d_fwd"], (x, w, stride)),
            "grad_x": None,
            "grad_w": None,
        }
        y = impls["numpy"]["convt1d_fwd"](x, w, stride)
        gy = np.random.default_rng(0).standard_normal(y.shape)
        calls["grad_x"] = lambda t: (t["convt1d_grad_x"], (gy, w, stride))
        calls["grad_w"] = lambda t: (t["convt1d_grad_w"], (x, gy, stride, w.shape[2]))
    else:
        calls = {
            "fwd": lambda t: (t["conv1d_fwd"], (x, w, stride, dilation)),
        }
        y = impls["numpy"]["conv1d_fwd"](x, w, stride, dilation)
        gy = np.random.default_rng(0).standard_normal(y.shape)
        calls["grad_x"] = lambda t: (t["conv1d_grad_x"], (gy, w, stride, dilation, x.shape[2]))
        calls["grad_w"] = lambda t: (t["conv1d_grad_w"], (x, gy, stride, dilation, w.shape[2]))

    for op, make in calls.items():
        outs = {}
        times = {}
        for backend, table in impls.items():
            fn, args = make(table)
            outs[backend] = fn(*args)  # also the JIT warmup
            times[backend] = _time(fn, args, repeats)
        if len(outs) == 2:
            dev = float(np.max(np.abs(outs["numba"] - outs["numpy"])))
            if dev > 1e-10:
                raise AssertionError(f"{name}/{op}: backends disagree by {dev:.2e}")
        row = f"{name:28s} {op:7s}"
        for backend in sorted(times):
            row += f"  {backend}: {1e3 * times[backend]:8.3f} ms"
        if len(times) == 2:
            row += f"  speedup x{times['numpy'] / times['numba']:.2f}"
        print(row)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=10, help="timing repeats, best-of is reported")
    ap.add_argument("--batch", type=int, default=8)
    args = ap.parse_args()

    rng = np.random.default_rng(42)
    n = args.batch
    print(f"backends: {kernels.available_backends()}, active default: {kernels.BACKEND}")
    print(f"batch {n}, best of {args.repeats} runs\n")

    # residual stack shape: wide latent sequence, small dilated kernel
    x = rng.standard_normal((n, 32, 512))
    w = rng.standard_normal((32, 32, 3))
    bench_case("predictor conv (d=1)", x, w, 1, 1, False, args.repeats)
    bench_case("predictor conv (d=8)", x, w, 1, 8, False, args.repeats)

    # codec analysis shape: long waveform in, stride-2 downsampling
    x = rng.standard_normal((n, 16, 2048))
    w = rng.standard_normal((24, 16, 4))
    bench_case("codec encoder conv (s=2)", x, w, 2, 1, False, args.repeats)

    # codec synthesis shape: stride-2 transposed upsampling
    x = rng.standard_normal((n, 24, 1024))
    w = rng.standard_normal((24, 16, 4))
    bench_case("codec decoder convt (s=2)", x, w, 2, 1, True, args.repeats)


if __name__ == "__main__":
    main()
