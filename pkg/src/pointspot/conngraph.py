"""Local connection sets between primitives.

Two primitives are connected when the minimum distance between their
endpoints falls strictly below a threshold eps (closed kinds contribute
their center as the sole endpoint). The raw relation is symmetric; to bound
attention cost, each point keeps at most ``cap`` connections, dropped
uniformly at random under a seed. Capping is applied per point
independently, so the capped lists are directed and not necessarily
symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .document import Document
from . import kernels

DEFAULT_EPSILON = 1.0
DEFAULT_CAP = 8


@dataclass(frozen=True)
class ConnectionGraph:
    """Per-point connection lists, already capped."""

    neighbors: tuple[tuple[int, ...], ...]
    epsilon: float
    cap: int

    def __len__(self) -> int:
        return len(self.neighbors)

    @property
    def edge_count(self) -> int:
        return sum(len(ns) for ns in self.neighbors) // 2

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def is_empty(self) -> bool:
        return all(len(ns) == 0 for ns in self.neighbors)


def document_endpoints(doc: Document) -> tuple[np.ndarray, np.ndarray]:
    """Flat endpoint array plus the owning primitive index of each row."""
    pts: list[tuple[float, float]] = []
    owner: list[int] = []
    for i, p in enumerate(doc.primitives):
        for v in p.endpoints:
            pts.append(v)
            owner.append(i)
    if not pts:
        return np.zeros((0, 2)), np.zeros(0, dtype=np.int64)
    return np.asarray(pts, dtype=np.float64), np.asarray(owner, dtype=np.int64)


def raw_connections(doc: Document, epsilon: float = DEFAULT_EPSILON) -> list[list[int]]:
    """Uncapped symmetric adjacency lists under the strict eps threshold."""
    n = len(doc)
    pts, owner = document_endpoints(doc)
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in kernels.pair_candidates(pts, owner, epsilon):
        adj[int(i)].append(int(j))
        adj[int(j)].append(int(i))
    for lst in adj:
        lst.sort()
    return adj


def build_connections(doc: Document, epsilon: float = DEFAULT_EPSILON,
                      cap: int = DEFAULT_CAP, seed: int = 0) -> ConnectionGraph:
    """Connection graph of a document: threshold, then per-point random cap.

    Deterministic for a fixed seed. One point per primitive, indexed in
    document order, matching ``build_point_set``.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    adj = raw_connections(doc, epsilon)
    rng = np.random.default_rng(seed)
    capped: list[tuple[int, ...]] = []
    for lst in adj:
        if len(lst) > cap:
            keep = rng.choice(len(lst), size=cap, replace=False)
            keep.sort()
            capped.append(tuple(lst[k] for k in keep))
        else:
            capped.append(tuple(lst))
    return ConnectionGraph(neighbors=tuple(capped), epsilon=float(epsilon), cap=int(cap))


def connection_stats(g: ConnectionGraph) -> dict:
    """Degree histogram and connected-component count of the capped graph.

    Components are computed on the undirected closure of the capped lists.
    """
    n = len(g)
    degrees = np.array([g.degree(i) for i in range(n)], dtype=np.int64)
    hist: dict[int, int] = {}
    for d in degrees:
        hist[int(d)] = hist.get(int(d), 0) + 1

    undirected: list[set[int]] = [set() for _ in range(n)]
    for i, ns in enumerate(g.neighbors):
        for j in ns:
            undirected[i].add(j)
            undirected[j].add(i)
    seen = np.zeros(n, dtype=bool)
    components = 0
    for s in range(n):
        if seen[s]:
            continue
        components += 1
        stack = [s]
        seen[s] = True
        while stack:
            u = stack.pop()
            for v in undirected[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
    return {
        "points": n,
        "edges": int(sum(len(s) for s in undirected) // 2),
        "degree_histogram": dict(sorted(hist.items())),
        "components": components,
    }


def edges_csv(g: ConnectionGraph, doc: Document) -> str:
    """Debug dump of directed capped edges with endpoint distances."""
    pts, owner = document_endpoints(doc)
    lines = ["i,j,d_ij"]
    for i, ns in enumerate(g.neighbors):
        mine = pts[owner == i]
        for j in ns:
            theirs = pts[owner == j]
            d2 = np.min(np.sum((mine[:, None, :] - theirs[None, :, :]) ** 2, axis=-1))
            lines.append(f"{i},{j},{np.sqrt(d2)!r}")
    return "\n".join(lines) + "\n"
