"""Pure-numpy geometry kernels.

These are the fallback implementations used when the compiled extension is
unavailable. The compiled twin in ``_native.pyx`` must produce identical
indices () and weights (to float rounding) for every function here; the
parity tests in ``tests/test_kernels.py`` enforce that.

All functions take float64 coordinate arrays of shape (N, 2) and never
mutate their inputs. Ties in any nearest-neighbor ordering are broken by the
lower point index so results are reproducible across implementations.
"""

from __future__ import annotations

import numpy as np

IMPL = "reference"

_PAIR_CHUNK = 512


def knn(points: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest points for every point (self included).

    Rows are ordered by (squared distance, index). Requires 1 <= k <= N.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"knn: k={k} out of range for {n} points")
    dx = pts[:, 0:1] - pts[None, :, 0]
    dy = pts[:, 1:2] - pts[None, :, 1]
    d2 = dx * dx + dy * dy
    idx = np.broadcast_to(np.arange(n, dtype=np.int64), (n, n))
    order = np.lexsort((idx, d2), axis=-1)
    return np.ascontiguousarray(order[:, :k], dtype=np.int64)


def fps(points: np.ndarray, m: int, start: int) -> np.ndarray:
    """Farthest-point sampling of m indices beginning at ``start``.

    Classic greedy max-min: each step picks the point farthest from the
    selected set, first occurrence winning ties.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"fps: m={m} out of range for {n} points")
    if not 0 <= start < n:
        raise ValueError(f"fps: start={start} out of range")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = start
    best = np.full(n, np.inf)
    cur = start
    for i in range(1, m):
        dx = pts[:, 0] - pts[cur, 0]
        dy = pts[:, 1] - pts[cur, 1]
        np.minimum(best, dx * dx + dy * dy, out=best)
        cur = int(np.argmax(best))
        selected[i] = cur
    return selected


def pair_candidates(endpoints: np.ndarray, owner: np.ndarray, eps: float) -> np.ndarray:
    """Owner pairs (i, j), i < j, whose closest endpoints are within eps.

    ``endpoints`` lists every endpoint of every owner; ``owner[e]`` is the
    owner index of endpoint e. The strict test is d^2 < eps^2. Output rows
    are unique and sorted lexicographically.
    """
    pts = np.ascontiguousarray(endpoints, dtype=np.float64)
    own = np.ascontiguousarray(owner, dtype=np.int64)
    m = pts.shape[0]
    eps2 = float(eps) * float(eps)
    found: set[tuple[int, int]] = set()
    for lo in range(0, m, _PAIR_CHUNK):
        hi = min(lo + _PAIR_CHUNK, m)
        dx = pts[lo:hi, 0:1] - pts[None, :, 0]
        dy = pts[lo:hi, 1:2] - pts[None, :, 1]
        close = (dx * dx + dy * dy) < eps2
        rows, cols = np.nonzero(close)
        for r, c in zip(own[rows + lo], own[cols]):
            if r < c:
                found.add((int(r), int(c)))
            elif c < r:
                found.add((int(c), int(r)))
    if not found:
        return np.empty((0, 2), dtype=np.int64)
    out = np.array(sorted(found), dtype=np.int64)
    return out


def knn_idw(src: np.ndarray, dst: np.ndarray, k: int, exact_eps: float) -> tuple[np.ndarray, np.ndarray]:
    """K nearest source points plus inverse-distance weights per target.

    Returns (idx, w), both (Nt, k). Weights are 1/d normalized to sum to 1.
    A target whose nearest source lies closer than ``exact_eps`` copies that
    source exactly: its weight row is one-hot.
    """
    s = np.ascontiguousarray(src, dtype=np.float64)
    d = np.ascontiguousarray(dst, dtype=np.float64)
    ns = s.shape[0]
    nt = d.shape[0]
    if not 1 <= k <= ns:
        raise ValueError(f"knn_idw: k={k} out of range for {ns} sources")
    dx = d[:, 0:1] - s[None, :, 0]
    dy = d[:, 1:2] - s[None, :, 1]
    d2 = dx * dx + dy * dy
    cols = np.broadcast_to(np.arange(ns, dtype=np.int64), (nt, ns))
    order = np.lexsort((cols, d2), axis=-1)
    idx = np.ascontiguousarray(order[:, :k], dtype=np.int64)
    dist = np.sqrt(np.take_along_axis(d2, idx, axis=1))
    w = np.empty((nt, k), dtype=np.float64)
    exact = dist[:, 0] < exact_eps
    inv = 1.0 / np.maximum(dist, exact_eps)
    w[:] = inv / np.sum(inv, axis=1, keepdims=True)
    w[exact] = 0.0
    w[exact, 0] = 1.0
    return idx, w
