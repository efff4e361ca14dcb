"""Domain model for vector drawings: primitives, documents, predictions.

A drawing is an ordered sequence of geometric primitives (line, arc,
circle, ellipse), each optionally annotated with a semantic class id and an
instance id. Chord endpoints of arcs are computed once at construction so
downstream geometry never re-derives them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import ellipe

BACKGROUND = -1
NO_INSTANCE = -1

KINDS = ("line", "arc", "circle", "ellipse")

TWO_PI = 2.0 * math.pi


class DocumentError(ValueError):
    """Validation or schema failure, carrying the offending primitive index."""

    def __init__(self, message: str, index: Optional[int] = None):
        self.index = index
        if index is not None:
            message = f"primitive {index}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Primitive:
    """One geometric entity of a drawing.

    ``v1``/``v2`` are the segment endpoints for lines and the chord
    endpoints for arcs; closed kinds (circle, ellipse) have none. ``a0``/
    ``a1`` bound an arc's span, counterclockwise, in radians.
    ``arc_length`` is the geodesic length of the entity in px.
    """

    kind: str
    v1: Optional[tuple[float, float]] = None
    v2: Optional[tuple[float, float]] = None
    center: Optional[tuple[float, float]] = None
    radius: Optional[float] = None
    radii: Optional[tuple[float, float]] = None
    rotation: float = 0.0
    a0: Optional[float] = None
    a1: Optional[float] = None
    semantic: int = BACKGROUND
    instance: int = NO_INSTANCE
    arc_length: float = 0.0

    @staticmethod
    def line(x1: float, y1: float, x2: float, y2: float,
             semantic: int = BACKGROUND, instance: int = NO_INSTANCE) -> "Primitive":
        length = math.hypot(x2 - x1, y2 - y1)
        if length == 0.0:
            raise DocumentError("degenerate zero-length line")
        return Primitive(kind="line", v1=(float(x1), float(y1)), v2=(float(x2), float(y2)),
                         semantic=semantic, instance=instance, arc_length=length)

    @staticmethod
    def arc(cx: float, cy: float, r: float, a0: float, a1: float,
            semantic: int = BACKGROUND, instance: int = NO_INSTANCE) -> "Primitive":
        if r <= 0.0:
            raise DocumentError(f"arc radius must be positive, got {r}")
        span = (a1 - a0) % TWO_PI
        if span == 0.0:
            raise DocumentError("arc has empty angular span")
        v1 = (cx + r * math.cos(a0), cy + r * math.sin(a0))
        v2 = (cx + r * math.cos(a1), cy + r * math.sin(a1))
        return Primitive(kind="arc", v1=v1, v2=v2, center=(float(cx), float(cy)),
                         radius=float(r), a0=float(a0), a1=float(a1),
                         semantic=semantic, instance=instance, arc_length=r * span)

    @staticmethod
    def circle(cx: float, cy: float, r: float,
               semantic: int = BACKGROUND, instance: int = NO_INSTANCE) -> "Primitive":
        if r <= 0.0:
            raise DocumentError(f"circle radius must be positive, got {r}")
        return Primitive(kind="circle", center=(float(cx), float(cy)), radius=float(r),
                         semantic=semantic, instance=instance, arc_length=TWO_PI * r)

    @staticmethod
    def ellipse(cx: float, cy: float, rx: float, ry: float, rot: float = 0.0,
                semantic: int = BACKGROUND, instance: int = NO_INSTANCE) -> "Primitive":
        if rx <= 0.0 or ry <= 0.0:
            raise DocumentError(f"ellipse radii must be positive, got ({rx}, {ry})")
        a, b = max(rx, ry), min(rx, ry)
        # full perimeter via the complete elliptic integral of the second kind
        perimeter = 4.0 * a * float(ellipe(1.0 - (b * b) / (a * a)))
        return Primitive(kind="ellipse", center=(float(cx), float(cy)),
                         radii=(float(rx), float(ry)), rotation=float(rot),
                         semantic=semantic, instance=instance, arc_length=perimeter)

    @property
    def endpoints(self) -> tuple[tuple[float, float], ...]:
        """Connection endpoints: segment/chord ends, or the center alone."""
        if self.kind in ("line", "arc"):
            return (self.v1, self.v2)
        return (self.center,)

    def is_background(self) -> bool:
        return self.semantic == BACKGROUND


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    is_thing: bool
    color: str


@dataclass(frozen=True, eq=True)
class Document:
    """One drawing: ordered primitives plus its category table."""

    id: str
    width: float
    height: float
    primitives: tuple[Primitive, ...]
    categories: dict[int, Category] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.primitives)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def arc_lengths(self) -> np.ndarray:
        return np.array([p.arc_length for p in self.primitives], dtype=np.float64)

    def semantics(self) -> np.ndarray:
        return np.array([p.semantic for p in self.primitives], dtype=np.int64)

    def instances(self) -> np.ndarray:
        return np.array([p.instance for p in self.primitives], dtype=np.int64)

    def is_labeled(self) -> bool:
        return any(not p.is_background() for p in self.primitives)


def validate_document(doc: Document) -> None:
    """Check every document invariant; raise DocumentError with the index."""
    for i, p in enumerate(doc.primitives):
        if p.kind not in KINDS:
            raise DocumentError(f"unknown primitive kind {p.kind!r}", i)
        if p.kind == "line":
            if p.v1 is None or p.v2 is None or p.center is not None:
                raise DocumentError("line needs endpoints and no center", i)
            if p.v1 == p.v2:
                raise DocumentError("degenerate zero-length line", i)
        elif p.kind == "arc":
            if p.center is None or p.radius is None or p.radius <= 0:
                raise DocumentError("arc needs center and positive radius", i)
            if p.a0 is None or p.a1 is None or (p.a1 - p.a0) % TWO_PI == 0.0:
                raise DocumentError("arc has empty angular span", i)
        elif p.kind == "circle":
            if p.center is None or p.radius is None or p.radius <= 0:
                raise DocumentError("circle needs center and positive radius", i)
        else:
            if p.center is None or p.radii is None or min(p.radii) <= 0:
                raise DocumentError("ellipse needs center and positive radii", i)
        if p.arc_length <= 0.0:
            raise DocumentError("arc_length must be positive", i)
        if p.semantic != BACKGROUND:
            cat = doc.categories.get(p.semantic)
            if cat is None:
                raise DocumentError(f"unknown semantic id {p.semantic}", i)
            if cat.is_thing and p.instance < 0:
                raise DocumentError(f"thing primitive of class {cat.name!r} lacks an instance id", i)
            if not cat.is_thing and p.instance != NO_INSTANCE:
                raise DocumentError(f"stuff primitive of class {cat.name!r} must have instance -1", i)
        elif p.instance != NO_INSTANCE:
            raise DocumentError("background primitive must have instance -1", i)


@dataclass
class PanopticPrediction:
    """Per-primitive (semantic, instance) assignment for one document."""

    doc_id: str
    semantics: np.ndarray
    instances: np.ndarray

    def __post_init__(self):
        self.semantics = np.asarray(self.semantics, dtype=np.int64)
        self.instances = np.asarray(self.instances, dtype=np.int64)
        if self.semantics.shape != self.instances.shape:
            raise ValueError("semantics and instances must align")

    def __len__(self) -> int:
        return int(self.semantics.shape[0])

    @staticmethod
    def from_document(doc: Document) -> "PanopticPrediction":
        """Ground-truth labels repackaged as a prediction (oracle mode)."""
        return PanopticPrediction(doc.id, doc.semantics(), doc.instances())


def translated(doc: Document, tx: float, ty: float) -> Document:
    """Document shifted by (tx, ty); labels and category table unchanged."""

    def move(pt):
        return None if pt is None else (pt[0] + tx, pt[1] + ty)

    prims = tuple(
        replace(p, v1=move(p.v1), v2=move(p.v2), center=move(p.center))
        for p in doc.primitives
    )
    return replace(doc, primitives=prims)


def segments_from_labels(semantics: Sequence[int], instances: Sequence[int],
                         categories: dict[int, Category]) -> list[tuple[int, int, list[int]]]:
    """Group entity indices into symbol segments.

    Things group by (class, instance); all stuff entities of one class form
    a single segment; background is excluded. Returns (semantic, instance,
    member indices) triples in first-appearance order.
    """
    groups: dict[tuple[int, int], list[int]] = {}
    for i, (sem, inst) in enumerate(zip(semantics, instances)):
        sem = int(sem)
        if sem == BACKGROUND:
            continue
        cat = categories.get(sem)
        if cat is not None and not cat.is_thing:
            key = (sem, NO_INSTANCE)
        else:
            key = (sem, int(inst))
        groups.setdefault(key, []).append(i)
    return [(sem, inst, members) for (sem, inst), members in groups.items()]
