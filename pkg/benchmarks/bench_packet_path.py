"""Compare the compiled packet-path kernels against the pure-Python fallback.

Times the two hot loops (mark classification and shaped arrival computation)
over an identical randomized workload and prints per-implementation
throughput plus the speedup. The outputs are also cross-checked, so a run
doubles as a parity smoke test.

Usage: python3 benchmarks/bench_packet_path.py [--packets N] [--filters N]
"""
import argparse
import time

import numpy as np

from qosbridge._kernels import KERNEL_IMPL, UBYTES_PER_BYTE, _pure

if KERNEL_IMPL == "compiled":
    from qosbridge._kernels import _speedups
else:
    _speedups = None


def make_workload(packets, filters, seed=7):
    rng = np.random.default_rng(seed)
    marks = rng.integers(0, 8, size=packets, dtype=np.uint32) << 13
    gaps = rng.integers(20, 200, size=packets, dtype=np.int64)
    send_us = np.cumsum(gaps) - gaps[0]
    sizes = rng.integers(64, 1500, size=packets, dtype=np.int64)
    filter_marks = (np.arange(1, filters + 1, dtype=np.uint32) % 7 + 1) << 13
    filter_masks = np.full(filters, 0xE000, dtype=np.uint32)
    return marks, send_us, sizes, filter_marks, filter_masks


def bench(fn, repeats=5):
    best = float("inf")
    result = None
    for _ in range(repeats):
        start = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - start)
    return best, result


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--packets", type=int, default=200_000, help="packets per batch")
    parser.add_argument("--filters", type=int, default=8, help="installed filters")
    args = parser.parse_args(argv)

    marks, send_us, sizes, fmarks, fmasks = make_workload(args.packets, args.filters)
    rate = 1_000_000  # bytes/s, low enough that the shaper loop really works
    cap = 2 * rate * UBYTES_PER_BYTE // 1000  # 2 ms worth of bucket

    impls = [("pure", _pure)]
    if _speedups is not None:
        impls.append(("compiled", _speedups))
    else:
        print("compiled extension unavailable; timing the fallback only")

    print(f"workload: {args.packets} packets, {args.filters} filters")
    reference = {}
    for label, mod in impls:
        t_cls, out_cls = bench(lambda m=mod: m.classify_marks(marks, fmarks, fmasks))
        t_shp, out_shp = bench(
            lambda m=mod: m.shaped_arrivals(send_us, sizes, rate, cap, cap, 0, 10_000)
        )
        reference[label] = (out_cls, out_shp[0])
        print(
            f"{label:>8}: classify {args.packets / t_cls / 1e6:7.2f} Mpkt/s"
            f"   shaper {args.packets / t_shp / 1e6:7.2f} Mpkt/s"
            f"   ({t_cls * 1e3:.1f} ms / {t_shp * 1e3:.1f} ms)"
        )
        if label == "compiled":
            pure_cls, pure_shp = reference["pure"]
            assert np.array_equal(out_cls, pure_cls), "classification mismatch"
            assert np.array_equal(out_shp[0], pure_shp), "arrival mismatch"
            print(f"parity: outputs identical across {args.packets} packets")


if __name__ == "__main__":
    main()
