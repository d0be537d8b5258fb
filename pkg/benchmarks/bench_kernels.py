#!/usr/bin/env python3
"""Benchmark the numba kernel lane against the pure-numpy fallback.

Runs every hot kernel at the shapes the trainers and samplers actually
use and prints a table of per-call times plus the speedup factor.

    python benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from soundreel import _kernels_numba as knb
from soundreel import _kernels_numpy as knp


def timeit(fn, repeats: int) -> float:
    fn()  # warm-up (first numba call pays JIT compilation)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench(repeats: int) -> None:
    rng = np.random.default_rng(0)
    rows = []

    # conv shapes: the encoder's three blocks on a 32-clip x 5-segment batch,
    # and the image denoiser's widest layer
    conv_cases = [
        ("conv 1->8 @64x25", (160, 1, 64, 25), 8),
        ("conv 8->16 @32x12", (160, 8, 32, 12), 16),
        ("conv 16->128 @16x6", (160, 16, 16, 6), 128),
        ("conv 16->16 @16x16", (64, 16, 16, 16), 16),
    ]
    for name, xshape, c_out in conv_cases:
        x = rng.standard_normal(xshape)
        w = rng.standard_normal((c_out, xshape[1], 3, 3))
        b = np.zeros(c_out)
        dy = rng.standard_normal((xshape[0], c_out, xshape[2], xshape[3]))
        t_np = timeit(lambda: knp.conv2d3x3_fwd(x, w, b), repeats)
        t_nb = timeit(lambda: knb.conv2d3x3_fwd(x, w, b), repeats)
        rows.append((name + " fwd", t_np, t_nb))
        t_np = timeit(lambda: knp.conv2d3x3_bwd(x, w, dy), repeats)
        t_nb = timeit(lambda: knb.conv2d3x3_bwd(x, w, dy), repeats)
        rows.append((name + " bwd", t_np, t_nb))

    # LSTM over 5 segments, batch 32, feature 128 -> hidden 64
    xs = rng.standard_normal((5, 32, 128))
    wx = rng.standard_normal((128, 256)) * 0.1
    wh = rng.standard_normal((64, 256)) * 0.1
    lb = np.zeros(256)
    hs, cs, gates = knp.lstm_seq_fwd(xs, wx, wh, lb)
    dhs = rng.standard_normal((5, 32, 64))
    rows.append(
        (
            "lstm seq fwd",
            timeit(lambda: knp.lstm_seq_fwd(xs, wx, wh, lb), repeats),
            timeit(lambda: knb.lstm_seq_fwd(xs, wx, wh, lb), repeats),
        )
    )
    rows.append(
        (
            "lstm seq bwd",
            timeit(lambda: knp.lstm_seq_bwd(xs, wx, wh, hs, cs, gates, dhs), repeats),
            timeit(lambda: knb.lstm_seq_bwd(xs, wx, wh, hs, cs, gates, dhs), repeats),
        )
    )

    # fused point-denoiser forward: batched sampling and single-frame shapes
    ps = [
        0.1 * rng.standard_normal(s)
        for s in [
            (2, 128), (128,), (32, 128), (64, 128),
            (128, 128), (128,), (64, 128),
            (128, 128), (128,), (128, 2), (2,),
        ]
    ]
    for label, bsz in (("denoiser fwd B=1000", 1000), ("denoiser fwd B=1", 1)):
        z = rng.standard_normal((bsz, 2))
        temb = rng.standard_normal((bsz, 32))
        cond = rng.standard_normal((bsz, 64))
        reps = repeats if bsz > 1 else repeats * 50
        rows.append(
            (
                label,
                timeit(lambda: knp.mlp_denoiser_fwd(z, temb, cond, *ps), reps),
                timeit(lambda: knb.mlp_denoiser_fwd(z, temb, cond, *ps), reps),
            )
        )

    # elementwise gelu on a conv-block activation
    x = rng.standard_normal((160, 16, 32, 12))
    dy = rng.standard_normal(x.shape)
    rows.append(
        (
            "gelu fwd 1M elems",
            timeit(lambda: knp.gelu_fwd(x), repeats),
            timeit(lambda: knb.gelu_fwd(x), repeats),
        )
    )
    rows.append(
        (
            "gelu bwd 1M elems",
            timeit(lambda: knp.gelu_bwd(x, dy), repeats),
            timeit(lambda: knb.gelu_bwd(x, dy), repeats),
        )
    )

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, t_np, t_nb in rows:
        print(f"{name:<{width}}  {t_np * 1e3:>8.2f}ms  {t_nb * 1e3:>8.2f}ms  {t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    bench(args.repeats)
