"""Primitive-to-point encoding.

Each primitive becomes one 2D point carrying a 6-dim feature vector:
[angle, chord length, one-hot kind]. The angle is measured clockwise from
the +x axis to the chord direction v1 -> v2, in [0, 2*pi). Closed kinds
(circle, ellipse) have no chord, so they get angle 0 and length equal to
their diameter / major diameter; the one-hot disambiguates the kind.

Features are stored raw (radians, px); normalization to network scale
happens in the backbone input projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .document import TWO_PI, Document, Primitive

KIND_ORDER = ("line", "arc", "circle", "ellipse")
_KIND_INDEX = {k: i for i, k in enumerate(KIND_ORDER)}

FEATURE_DIM = 6  # angle, length, one-hot(4)


def primitive_position(p: Primitive) -> np.ndarray:
    """Point position: chord midpoint for open kinds, center for closed."""
    if p.kind in ("line", "arc"):
        return np.array([(p.v1[0] + p.v2[0]) / 2.0, (p.v1[1] + p.v2[1]) / 2.0])
    return np.array([p.center[0], p.center[1]])


def chord_angle(dx: float, dy: float) -> float:
    """Clockwise angle from the +x axis to direction (dx, dy), in [0, 2*pi)."""
    return (-math.atan2(dy, dx)) % TWO_PI


def primitive_feature(p: Primitive) -> np.ndarray:
    """6-dim feature [alpha, l, onehot(line, arc, circle, ellipse)].

    Arc chords are derived from (radius, angles) rather than the stored
    endpoints so the feature is exactly independent of the arc's center.
    """
    f = np.zeros(FEATURE_DIM)
    if p.kind == "line":
        dx = p.v2[0] - p.v1[0]
        dy = p.v2[1] - p.v1[1]
        f[0] = chord_angle(dx, dy)
        f[1] = math.hypot(dx, dy)
    elif p.kind == "arc":
        dx = p.radius * (math.cos(p.a1) - math.cos(p.a0))
        dy = p.radius * (math.sin(p.a1) - math.sin(p.a0))
        f[0] = chord_angle(dx, dy)
        f[1] = math.hypot(dx, dy)
    else:
        f[0] = 0.0
        f[1] = 2.0 * (p.radius if p.kind == "circle" else max(p.radii))
    f[2 + _KIND_INDEX[p.kind]] = 1.0
    return f


@dataclass(frozen=True)
class PointSet:
    """Point-based view of a document: one point per primitive, in order."""

    positions: np.ndarray   # (N, 2) float64
    features: np.ndarray    # (N, 6) float64
    source_index: np.ndarray  # (N,) int64, bijective onto document primitives
    semantics: Optional[np.ndarray] = None  # (N,) int64, -1 = background
    instances: Optional[np.ndarray] = None  # (N,) int64

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @property
    def labeled(self) -> bool:
        return self.semantics is not None


def build_point_set(doc: Document, with_labels: bool = True) -> PointSet:
    """Encode every primitive of the document, preserving order.

    Labels are copied when the document carries any annotation and
    ``with_labels`` is set.
    """
    n = len(doc)
    positions = np.zeros((n, 2))
    features = np.zeros((n, FEATURE_DIM))
    for i, p in enumerate(doc.primitives):
        positions[i] = primitive_position(p)
        features[i] = primitive_feature(p)
    labeled = with_labels and doc.is_labeled()
    return PointSet(
        positions=positions,
        features=features,
        source_index=np.arange(n, dtype=np.int64),
        semantics=doc.semantics() if labeled else None,
        instances=doc.instances() if labeled else None,
    )


def points_csv(ps: PointSet) -> str:
    """Debug dump: one row per point (x, y, alpha, l, kind, semantic, instance)."""
    lines = ["x,y,alpha,l,kind,semantic,instance"]
    kind_idx = np.argmax(ps.features[:, 2:], axis=1)
    for i in range(len(ps)):
        sem = int(ps.semantics[i]) if ps.semantics is not None else -1
        inst = int(ps.instances[i]) if ps.instances is not None else -1
        lines.append(
            f"{ps.positions[i, 0]!r},{ps.positions[i, 1]!r},"
            f"{ps.features[i, 0]!r},{ps.features[i, 1]!r},"
            f"{KIND_ORDER[kind_idx[i]]},{sem},{inst}"
        )
    return "\n".join(lines) + "\n"
