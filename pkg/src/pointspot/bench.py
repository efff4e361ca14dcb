"""Benchmark the compiled geometry kernels against the numpy fallback."""

from __future__ import annotations

import time

import numpy as np

from . import kernels


def _time(fn, *args, repeats: int = 5) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def run_benchmark(n_points: int = 2000, k: int = 16, seed: int = 0,
                  repeats: int = 5) -> list:
    """Rows of (kernel, reference seconds, native seconds or None, speedup)."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 500, (n_points, 2))
    dst = rng.uniform(0, 500, (n_points // 4, 2))
    owner = np.repeat(np.arange(n_points // 2), 2)

    cases = [
        ("knn", (pts, k)),
        ("fps", (pts, n_points // 4, 0)),
        ("pair_candidates", (pts, owner, 2.0)),
        ("knn_idw", (pts, dst, k, 1e-8)),
    ]
    rows = []
    for name, args in cases:
        ref_t = _time(getattr(kernels.reference, name), *args, repeats=repeats)
        if kernels.native is not None:
            nat_t = _time(getattr(kernels.native, name), *args, repeats=repeats)
            rows.append((name, ref_t, nat_t, ref_t / nat_t))
        else:
            rows.append((name, ref_t, None, None))
    return rows


def format_table(rows: list, n_points: int) -> str:
    lines = [f"geometry kernels, {n_points} points (best of several runs)",
             f"{'kernel':<18}{'reference [ms]':>16}{'native [ms]':>14}{'speedup':>10}"]
    for name, ref_t, nat_t, speedup in rows:
        nat = f"{nat_t * 1e3:.3f}" if nat_t is not None else "n/a"
        spd = f"{speedup:0.2f}x" if speedup is not None else "n/a"
        lines.append(f"{name:<18}{ref_t * 1e3:>16.3f}{nat:>14}{spd:>10}")
    return "\n".join(lines)
