"""Seeded synthetic floorplan generator and geometric augmentation.

Six thing classes (door, window, table, chair, sink, tub) and two stuff
classes (wall, railing). Thing templates are built from primitives that
share endpoints exactly (distance zero), so every generated instance stays
a single connected component of the epsilon-graph at any placement scale.
Background clutter is unlabeled short lines.

Placement draws an anchor, a continuous rotation, and a scale per symbol,
rejecting overlaps against already-placed bounding circles; after a bounded
number of retries the symbol is skipped with a warning. Everything is
deterministic in (config, document seed).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .document import BACKGROUND, NO_INSTANCE, Category, Document, Primitive

THING_CLASSES = ("door", "window", "table", "chair", "sink", "tub")
STUFF_CLASSES = ("wall", "railing")

_COLORS = {
    "door": "#e6194b", "window": "#3cb44b", "table": "#4363d8", "chair": "#f58231",
    "sink": "#911eb4", "tub": "#46f0f0", "wall": "#9a6324", "railing": "#808000",
}


def default_categories() -> dict[int, Category]:
    cats = {}
    for i, name in enumerate(THING_CLASSES, start=1):
        cats[i] = Category(i, name, True, _COLORS[name])
    for i, name in enumerate(STUFF_CLASSES, start=1 + len(THING_CLASSES)):
        cats[i] = Category(i, name, False, _COLORS[name])
    return cats


CATEGORY_ID = {name: i for i, name in enumerate(THING_CLASSES + STUFF_CLASSES, start=1)}


# ---------------------------------------------------------------------------
# rigid transforms on primitives
# ---------------------------------------------------------------------------

def transform_primitive(p: Primitive, rotation: float = 0.0, scale: float = 1.0,
                        tx: float = 0.0, ty: float = 0.0, flip: bool = False) -> Primitive:
    """Mirror (y -> -y), then rotate counterclockwise, scale, translate."""

    def xform(pt):
        x, y = pt
        if flip:
            y = -y
        c, s = math.cos(rotation), math.sin(rotation)
        x, y = c * x - s * y, s * x + c * y
        return (scale * x + tx, scale * y + ty)

    if p.kind == "line":
        (x1, y1), (x2, y2) = xform(p.v1), xform(p.v2)
        return Primitive.line(x1, y1, x2, y2, p.semantic, p.instance)
    if p.kind == "circle":
        cx, cy = xform(p.center)
        return Primitive.circle(cx, cy, p.radius * scale, p.semantic, p.instance)
    if p.kind == "ellipse":
        cx, cy = xform(p.center)
        rot = (-p.rotation if flip else p.rotation) + rotation
        return Primitive.ellipse(cx, cy, p.radii[0] * scale, p.radii[1] * scale,
                                 rot, p.semantic, p.instance)
    # arc: angles flip to (-a1, -a0) under the mirror, then rotate
    a0, a1 = (-p.a1, -p.a0) if flip else (p.a0, p.a1)
    cx, cy = xform(p.center)
    return Primitive.arc(cx, cy, p.radius * scale, a0 + rotation, a1 + rotation,
                         p.semantic, p.instance)


# ---------------------------------------------------------------------------
# symbol templates (local frames, exact shared endpoints)
# ---------------------------------------------------------------------------

def _rect(w: float, h: float, x0: float = 0.0, y0: float = 0.0) -> list:
    corners = [(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)]
    return [Primitive.line(*corners[i], *corners[(i + 1) % 4]) for i in range(4)]


def _door() -> list:
    arc = Primitive.arc(0.0, 0.0, 4.0, 0.0, math.pi / 2.0)
    jamb = Primitive.line(0.0, 4.0, 0.0, 0.0)  # shares the arc's upper chord endpoint
    return [arc, jamb]


def _window() -> list:
    return _rect(6.0, 0.8)


def _table() -> list:
    return _rect(8.0, 5.0)


def _chair() -> list:
    seat = _rect(3.0, 3.0)
    arms = [Primitive.line(0.0, 3.0, 0.0, 4.2), Primitive.line(3.0, 3.0, 3.0, 4.2),
            Primitive.line(0.0, 4.2, 3.0, 4.2)]
    return seat + arms


def _sink() -> list:
    return [Primitive.circle(0.0, 0.0, 1.5)]


def _tub() -> list:
    return [Primitive.ellipse(0.0, 0.0, 3.0, 1.8)]


@dataclass(frozen=True)
class SymbolTemplate:
    name: str
    category_id: int
    build: Callable[[], list]
    radius: float          # bounding radius of the local frame
    scale_range: tuple = (0.8, 2.0)


TEMPLATES = (
    SymbolTemplate("door", CATEGORY_ID["door"], _door, 6.0),
    SymbolTemplate("window", CATEGORY_ID["window"], _window, 6.5),
    SymbolTemplate("table", CATEGORY_ID["table"], _table, 10.0),
    SymbolTemplate("chair", CATEGORY_ID["chair"], _chair, 5.5),
    SymbolTemplate("sink", CATEGORY_ID["sink"], _sink, 2.0),
    SymbolTemplate("tub", CATEGORY_ID["tub"], _tub, 3.5),
)


@dataclass(frozen=True)
class SynthConfig:
    canvas: float = 128.0
    symbols_min: int = 4
    symbols_max: int = 8
    clutter_min: int = 4
    clutter_max: int = 10
    walls: bool = True
    railing: bool = True
    seed: int = 0
    max_retries: int = 40

    def __post_init__(self):
        if self.symbols_min < 1 or self.symbols_max < self.symbols_min:
            raise ValueError("invalid symbols range")
        if self.canvas < 64:
            raise ValueError("canvas too small for placements")


def _wall_primitives(canvas: float) -> list:
    sem = CATEGORY_ID["wall"]
    inset = 4.0
    gap = 0.6
    outer = _rect(canvas - 2 * inset, canvas - 2 * inset, inset, inset)
    inner = _rect(canvas - 2 * (inset + gap), canvas - 2 * (inset + gap), inset + gap, inset + gap)
    return [replace(p, semantic=sem) for p in outer + inner]


def _railing_primitives(canvas: float, rng: np.random.Generator) -> list:
    sem = CATEGORY_ID["railing"]
    y = float(rng.uniform(0.25 * canvas, 0.75 * canvas))
    x0 = float(rng.uniform(8.0, 0.3 * canvas))
    length = float(rng.uniform(0.3 * canvas, 0.5 * canvas))
    n_seg = 4
    step = length / n_seg
    prims = []
    for i in range(n_seg):
        prims.append(Primitive.line(x0 + i * step, y, x0 + (i + 1) * step, y, sem))
    for i in range(n_seg + 1):
        prims.append(Primitive.line(x0 + i * step, y, x0 + i * step, y + 1.6, sem))
    return prims


def generate_document(cfg: SynthConfig, doc_seed: int) -> Document:
    """One fully annotated synthetic drawing, deterministic per (cfg, seed)."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, doc_seed)))
    categories = default_categories()
    prims: list[Primitive] = []
    placed: list[tuple[float, float, float]] = []  # (x, y, radius) exclusion circles

    if cfg.walls:
        prims.extend(_wall_primitives(cfg.canvas))
    if cfg.railing:
        rail = _railing_primitives(cfg.canvas, rng)
        prims.extend(rail)
        xs = [v[0] for p in rail for v in p.endpoints]
        ys = [v[1] for p in rail for v in p.endpoints]
        cx, cy = (min(xs) + max(xs)) / 2.0, (min(ys) + max(ys)) / 2.0
        placed.append((cx, cy, (max(xs) - min(xs)) / 2.0 + 2.0))

    n_symbols = int(rng.integers(cfg.symbols_min, cfg.symbols_max + 1))
    instance_counter: dict[int, int] = {}
    margin = 8.0
    for _ in range(n_symbols):
        tpl = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
        ok = False
        for _attempt in range(cfg.max_retries):
            scale = float(rng.uniform(*tpl.scale_range))
            rot = float(rng.uniform(0.0, 2.0 * math.pi))
            rad = tpl.radius * scale + 2.0
            lo, hi = margin + rad, cfg.canvas - margin - rad
            if lo >= hi:
                continue
            tx = float(rng.uniform(lo, hi))
            ty = float(rng.uniform(lo, hi))
            if all((tx - x) ** 2 + (ty - y) ** 2 >= (rad + r) ** 2 for x, y, r in placed):
                ok = True
                break
        if not ok:
            warnings.warn(f"placement failed for {tpl.name} after {cfg.max_retries} retries")
            continue
        inst = instance_counter.get(tpl.category_id, 0)
        instance_counter[tpl.category_id] = inst + 1
        for p in tpl.build():
            prims.append(transform_primitive(
                replace(p, semantic=tpl.category_id, instance=inst),
                rotation=rot, scale=scale, tx=tx, ty=ty))
        placed.append((tx, ty, rad))

    n_clutter = int(rng.integers(cfg.clutter_min, cfg.clutter_max + 1))
    for _ in range(n_clutter):
        x = float(rng.uniform(6.0, cfg.canvas - 6.0))
        y = float(rng.uniform(6.0, cfg.canvas - 6.0))
        ang = float(rng.uniform(0.0, 2.0 * math.pi))
        ln = float(rng.uniform(1.5, 6.0))
        prims.append(Primitive.line(x, y, x + ln * math.cos(ang), y + ln * math.sin(ang)))

    return Document(id=f"synth-{doc_seed:05d}", width=cfg.canvas, height=cfg.canvas,
                    primitives=tuple(prims), categories=categories)


def augment(doc: Document, ops: Sequence[str] = ("rotate", "flip", "scale", "shift"),
            seed: int = 0) -> Document:
    """Random rotate/flip/scale/shift of a document; labels untouched.

    Rotation spins around the canvas center by a continuous angle; flip
    mirrors across the x axis half the time; scale is uniform about the
    origin and rescales the canvas; shift translates within +-5 px.
    """
    ops = set(ops)
    unknown = ops - {"rotate", "flip", "scale", "shift"}
    if unknown:
        raise ValueError(f"unknown augmentation ops {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    rotation = float(rng.uniform(0.0, 2.0 * math.pi)) if "rotate" in ops else 0.0
    flip = bool(rng.integers(2)) if "flip" in ops else False
    scale = float(rng.uniform(0.8, 1.25)) if "scale" in ops else 1.0
    if "shift" in ops:
        tx, ty = (float(v) for v in rng.uniform(-5.0, 5.0, 2))
    else:
        tx = ty = 0.0

    # rotate about the canvas center: conjugate the linear map with the
    # center translation (flip happens first, in canvas frame)
    cx, cy = doc.width / 2.0, doc.height / 2.0
    c, s = math.cos(rotation), math.sin(rotation)
    fy = -1.0 if flip else 1.0
    ox = scale * (cx - c * cx + s * fy * cy) + tx
    oy = scale * (cy - s * cx - c * fy * cy) + ty

    prims = tuple(
        transform_primitive(p, rotation=rotation, scale=scale, tx=ox, ty=oy, flip=flip)
        for p in doc.primitives
    )
    return replace(doc, width=doc.width * scale, height=doc.height * scale, primitives=prims)


def flip_document(doc: Document) -> Document:
    """Pure mirror across the x axis (y -> -y); exact involution."""
    prims = tuple(transform_primitive(p, flip=True) for p in doc.primitives)
    return replace(doc, primitives=prims)


def rotate_document(doc: Document, angle: float, about: Optional[tuple] = None) -> Document:
    """Counterclockwise rotation by ``angle`` about a point (default origin)."""
    if about is None:
        prims = tuple(transform_primitive(p, rotation=angle) for p in doc.primitives)
    else:
        ax, ay = about
        c, s = math.cos(angle), math.sin(angle)
        ox = ax - c * ax + s * ay
        oy = ay - s * ax - c * ay
        prims = tuple(transform_primitive(p, rotation=angle, tx=ox, ty=oy)
                      for p in doc.primitives)
    return replace(doc, primitives=prims)


def scale_document(doc: Document, factor: float) -> Document:
    """Uniform scale about the origin; canvas dimensions follow."""
    prims = tuple(transform_primitive(p, scale=factor) for p in doc.primitives)
    return replace(doc, width=doc.width * factor, height=doc.height * factor,
                   primitives=prims)
