# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometry kernels.

Mirror of ``_reference.py``: same signatures, same tie-breaking, same
strict-inequality predicates. Keep the arithmetic expression shapes in sync
with the numpy fallback (dx*dx + dy*dy, no fused forms) so both
implementations order candidates identically.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

IMPL = "native"

cdef extern from "math.h":
    double sqrt(double x) nogil
    double floor(double x) nogil


def knn(points, int k):
    """Indices of the k nearest points for every point (self included)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"knn: k={k} out of range for {n} points")
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.empty((n, k), dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] d2 = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i, j, s, best
    cdef double dx, dy, bd
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] used = np.zeros(n, dtype=np.uint8)
    for i in range(n):
        for j in range(n):
            dx = pts[i, 0] - pts[j, 0]
            dy = pts[i, 1] - pts[j, 1]
            d2[j] = dx * dx + dy * dy
            used[j] = 0
        # selection of k smallest by (d2, index)
        for s in range(k):
            best = -1
            bd = 0.0
            for j in range(n):
                if used[j]:
                    continue
                if best < 0 or d2[j] < bd:
                    best = j
                    bd = d2[j]
            used[best] = 1
            out[i, s] = best
    return out


def fps(points, int m, int start):
    """Farthest-point sampling of m indices beginning at ``start``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0]
    if m < 1 or m > n:
        raise ValueError(f"fps: m={m} out of range for {n} points")
    if start < 0 or start >= n:
        raise ValueError(f"fps: start={start} out of range")
    cdef cnp.ndarray[cnp.int64_t, ndim=1] selected = np.empty(m, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] best = np.full(n, np.inf)
    cdef Py_ssize_t i, j, cur, arg
    cdef double dx, dy, d2, mx
    selected[0] = start
    cur = start
    for i in range(1, m):
        for j in range(n):
            dx = pts[j, 0] - pts[cur, 0]
            dy = pts[j, 1] - pts[cur, 1]
            d2 = dx * dx + dy * dy
            if d2 < best[j]:
                best[j] = d2
        arg = 0
        mx = best[0]
        for j in range(1, n):
            if best[j] > mx:
                mx = best[j]
                arg = j
        selected[i] = arg
        cur = arg
    return selected


cdef Py_ssize_t _bisect_left(cnp.int64_t[:] arr, long long value, Py_ssize_t n) nogil:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) // 2
        if arr[mid] < value:
            lo = mid + 1
        else:
            hi = mid
    return lo


def pair_candidates(endpoints, owner, double eps):
    """Owner pairs (i, j), i < j, with closest endpoints within eps.

    Spatial hash on a grid of cell size eps: only the 3x3 cell block around
    each endpoint is scanned, so runtime is near-linear for bounded density.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pts = np.ascontiguousarray(endpoints, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] own = np.ascontiguousarray(owner, dtype=np.int64)
    cdef Py_ssize_t m = pts.shape[0]
    cdef double eps2 = eps * eps
    if m == 0:
        return np.empty((0, 2), dtype=np.int64)

    # grid keys per endpoint, then endpoints sorted by key for range scans
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cx = np.empty(m, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cy = np.empty(m, dtype=np.int64)
    cdef Py_ssize_t e
    for e in range(m):
        cx[e] = <long long> floor(pts[e, 0] / eps)
        cy[e] = <long long> floor(pts[e, 1] / eps)
    cdef long long min_x = cx.min(), min_y = cy.min()
    cdef long long span = <long long> (cy.max() - min_y) + 3
    cdef cnp.ndarray[cnp.int64_t, ndim=1] keys = (cx - min_x) * span + (cy - min_y)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.argsort(keys, kind="stable").astype(np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] skeys = keys[order]
    cdef cnp.int64_t[:] skeys_v = skeys

    cdef set found = set()
    cdef Py_ssize_t lo, f, g
    cdef long long oe, of, probe
    cdef double dx, dy
    cdef int ox, oy
    cdef long long kx, ky
    for e in range(m):
        kx = cx[e] - min_x
        ky = cy[e] - min_y
        oe = own[e]
        for ox in range(-1, 2):
            for oy in range(-1, 2):
                if kx + ox < 0 or ky + oy < 0:
                    continue
                probe = (kx + ox) * span + (ky + oy)
                lo = _bisect_left(skeys_v, probe, m)
                g = lo
                while g < m and skeys_v[g] == probe:
                    f = order[g]
                    of = own[f]
                    g += 1
                    if oe == of:
                        continue
                    dx = pts[e, 0] - pts[f, 0]
                    dy = pts[e, 1] - pts[f, 1]
                    if dx * dx + dy * dy < eps2:
                        if oe < of:
                            found.add((oe, of))
                        else:
                            found.add((of, oe))
    if not found:
        return np.empty((0, 2), dtype=np.int64)
    return np.array(sorted(found), dtype=np.int64)


def knn_idw(src, dst, int k, double exact_eps):
    """K nearest sources and inverse-distance weights per target point."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] s = np.ascontiguousarray(src, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] d = np.ascontiguousarray(dst, dtype=np.float64)
    cdef Py_ssize_t ns = s.shape[0]
    cdef Py_ssize_t nt = d.shape[0]
    if k < 1 or k > ns:
        raise ValueError(f"knn_idw: k={k} out of range for {ns} sources")
    cdef cnp.ndarray[cnp.int64_t, ndim=2] idx = np.empty((nt, k), dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] w = np.empty((nt, k), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] d2 = np.empty(ns, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] used = np.zeros(ns, dtype=np.uint8)
    cdef Py_ssize_t i, j, t, best
    cdef double dx, dy, bd, dist, inv_sum
    for t in range(nt):
        for j in range(ns):
            dx = d[t, 0] - s[j, 0]
            dy = d[t, 1] - s[j, 1]
            d2[j] = dx * dx + dy * dy
            used[j] = 0
        for i in range(k):
            best = -1
            bd = 0.0
            for j in range(ns):
                if used[j]:
                    continue
                if best < 0 or d2[j] < bd:
                    best = j
                    bd = d2[j]
            used[best] = 1
            idx[t, i] = best
        if sqrt(d2[idx[t, 0]]) < exact_eps:
            for i in range(k):
                w[t, i] = 0.0
            w[t, 0] = 1.0
        else:
            inv_sum = 0.0
            for i in range(k):
                dist = sqrt(d2[idx[t, i]])
                w[t, i] = 1.0 / dist
                inv_sum += w[t, i]
            for i in range(k):
                w[t, i] = w[t, i] / inv_sum
    return idx, w
