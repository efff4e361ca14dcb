"""Reading and writing vector-graphics documents.

The canonical on-disk format is JSON (schema below); SVG import is a
best-effort convenience for a small element subset and is never the
metric-bearing path. Rendering writes panoptic results back to colored SVG
with deterministic bytes.

Canonical document schema::

    {
      "id": str, "width": num, "height": num,
      "categories": [{"id": int, "name": str, "is_thing": bool, "color": "#rrggbb"}],
      "primitives": [
        {"kind": "line", "x1":, "y1":, "x2":, "y2":, "semantic": int|null, "instance": int},
        {"kind": "circle", "cx":, "cy":, "r":, ...},
        {"kind": "ellipse", "cx":, "cy":, "rx":, "ry":, "rot":, ...},
        {"kind": "arc", "cx":, "cy":, "r":, "a0":, "a1":, ...},
        {"kind": "polyline", "pts": [[x, y], ...], ...}
      ]
    }

Angles are radians. Polylines are decomposed into individual line
primitives at parse time, in place. A prediction file is
``{"id": str, "entities": [{"index": int, "semantic": int, "instance": int}]}``
with semantic -1 meaning background.
"""

from __future__ import annotations

import json
import math
import re
import xml.etree.ElementTree as ET
from typing import NamedTuple, Union

from .document import (
    BACKGROUND,
    NO_INSTANCE,
    TWO_PI,
    Category,
    Document,
    DocumentError,
    PanopticPrediction,
    Primitive,
    validate_document,
)

_PALETTE = (
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#46f0f0",
    "#f032e6", "#bcf60c", "#fabebe", "#008080", "#9a6324", "#800000",
)

# stroke variation cycle distinguishing instances of one thing class
_DASHES = ("none", "6,2", "2,2", "8,2,2,2", "4,4", "10,3")


def _category_from_json(obj: dict) -> Category:
    try:
        return Category(id=int(obj["id"]), name=str(obj["name"]),
                        is_thing=bool(obj["is_thing"]), color=str(obj["color"]))
    except KeyError as e:
        raise DocumentError(f"category missing field {e}") from None


def _labels(obj: dict) -> tuple[int, int]:
    sem = obj.get("semantic")
    sem = BACKGROUND if sem is None else int(sem)
    inst = int(obj.get("instance", NO_INSTANCE))
    return sem, inst


def parse_document(data: Union[bytes, str, dict]) -> Document:
    """Parse a canonical-JSON document; raises DocumentError on violations."""
    if isinstance(data, (bytes, str)):
        try:
            obj = json.loads(data)
        except json.JSONDecodeError as e:
            raise DocumentError(f"invalid JSON: {e}") from None
    else:
        obj = data
    for key in ("id", "width", "height", "categories", "primitives"):
        if key not in obj:
            raise DocumentError(f"document missing field {key!r}")
    categories = {}
    for c in obj["categories"]:
        cat = _category_from_json(c)
        categories[cat.id] = cat

    prims: list[Primitive] = []
    for i, p in enumerate(obj["primitives"]):
        kind = p.get("kind")
        try:
            sem, inst = _labels(p)
            if kind == "line":
                prims.append(Primitive.line(p["x1"], p["y1"], p["x2"], p["y2"], sem, inst))
            elif kind == "polyline":
                pts = p["pts"]
                if len(pts) < 2:
                    raise DocumentError("polyline needs at least 2 vertices")
                for (x1, y1), (x2, y2) in zip(pts, pts[1:]):
                    prims.append(Primitive.line(x1, y1, x2, y2, sem, inst))
            elif kind == "circle":
                prims.append(Primitive.circle(p["cx"], p["cy"], p["r"], sem, inst))
            elif kind == "ellipse":
                prims.append(Primitive.ellipse(p["cx"], p["cy"], p["rx"], p["ry"],
                                               p.get("rot", 0.0), sem, inst))
            elif kind == "arc":
                prims.append(Primitive.arc(p["cx"], p["cy"], p["r"], p["a0"], p["a1"], sem, inst))
            else:
                raise DocumentError(f"unknown primitive kind {kind!r}")
        except DocumentError as e:
            if e.index is None:
                raise DocumentError(str(e), i) from None
            raise
        except (KeyError, TypeError) as e:
            raise DocumentError(f"malformed {kind} entry: {e}", i) from None

    doc = Document(id=str(obj["id"]), width=float(obj["width"]), height=float(obj["height"]),
                   primitives=tuple(prims), categories=categories)
    validate_document(doc)
    return doc


def _primitive_to_json(p: Primitive) -> dict:
    out: dict = {"kind": p.kind}
    if p.kind == "line":
        out.update(x1=p.v1[0], y1=p.v1[1], x2=p.v2[0], y2=p.v2[1])
    elif p.kind == "circle":
        out.update(cx=p.center[0], cy=p.center[1], r=p.radius)
    elif p.kind == "ellipse":
        out.update(cx=p.center[0], cy=p.center[1], rx=p.radii[0], ry=p.radii[1], rot=p.rotation)
    elif p.kind == "arc":
        out.update(cx=p.center[0], cy=p.center[1], r=p.radius, a0=p.a0, a1=p.a1)
    out["semantic"] = None if p.semantic == BACKGROUND else p.semantic
    out["instance"] = p.instance
    return out


def serialize_document(doc: Document) -> bytes:
    """Canonical JSON bytes; parse(serialize(doc)) == doc."""
    obj = {
        "id": doc.id,
        "width": doc.width,
        "height": doc.height,
        "categories": [
            {"id": c.id, "name": c.name, "is_thing": c.is_thing, "color": c.color}
            for c in sorted(doc.categories.values(), key=lambda c: c.id)
        ],
        "primitives": [_primitive_to_json(p) for p in doc.primitives],
    }
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def parse_prediction(data: Union[bytes, str, dict], n_entities: int) -> PanopticPrediction:
    """Parse a prediction file; every entity index must be covered once."""
    obj = json.loads(data) if isinstance(data, (bytes, str)) else data
    import numpy as np

    sem = np.full(n_entities, BACKGROUND, dtype=np.int64)
    inst = np.full(n_entities, NO_INSTANCE, dtype=np.int64)
    seen = np.zeros(n_entities, dtype=bool)
    for e in obj["entities"]:
        i = int(e["index"])
        if not 0 <= i < n_entities:
            raise DocumentError(f"prediction index {i} out of range [0, {n_entities})")
        if seen[i]:
            raise DocumentError(f"duplicate prediction for entity {i}")
        seen[i] = True
        sem[i] = int(e["semantic"])
        inst[i] = int(e["instance"])
    if not seen.all():
        missing = int(np.flatnonzero(~seen)[0])
        raise DocumentError(f"prediction missing entity {missing}")
    return PanopticPrediction(str(obj["id"]), sem, inst)


def serialize_prediction(pred: PanopticPrediction) -> bytes:
    entities = [
        {"index": i, "semantic": int(s), "instance": int(z)}
        for i, (s, z) in enumerate(zip(pred.semantics, pred.instances))
    ]
    return json.dumps({"id": pred.doc_id, "entities": entities},
                      separators=(",", ":")).encode("utf-8")


# ---------------------------------------------------------------------------
# SVG import (best-effort subset)
# ---------------------------------------------------------------------------

class SvgImport(NamedTuple):
    document: Document
    skipped: int


_UNIT_RE = re.compile(r"^([0-9.eE+-]+)\s*(px|pt|mm|cm|in)?$")

_SVG_SCALARS = {"line": ("x1", "y1", "x2", "y2"), "circle": ("cx", "cy", "r"),
                "ellipse": ("cx", "cy", "rx", "ry")}


def _svg_len(value: str) -> float:
    m = _UNIT_RE.match(value.strip())
    if not m:
        raise DocumentError(f"cannot parse SVG length {value!r}")
    return float(m.group(1))


def _strip_tag(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _svg_labels(el: ET.Element) -> tuple[int, int]:
    sem = el.get("data-semantic")
    inst = el.get("data-instance")
    return (BACKGROUND if sem is None else int(sem),
            NO_INSTANCE if inst is None else int(inst))


_ARC_PATH_RE = re.compile(
    r"^\s*M\s*([0-9.eE+-]+)[,\s]+([0-9.eE+-]+)\s*"
    r"A\s*([0-9.eE+-]+)[,\s]+([0-9.eE+-]+)[,\s]+([0-9.eE+-]+)[,\s]+"
    r"([01])[,\s]+([01])[,\s]+([0-9.eE+-]+)[,\s]+([0-9.eE+-]+)\s*$"
)


def _arc_from_path(d: str, sem: int, inst: int) -> Primitive:
    """Circular-arc path of the exact form 'M x0 y0 A r r rot laf sf x1 y1'."""
    m = _ARC_PATH_RE.match(d)
    if not m:
        raise DocumentError("unsupported path form")
    x0, y0, rx, ry, _rot, laf, sf, x1, y1 = (float(g) for g in m.groups())
    if rx != ry:
        raise DocumentError("only circular path arcs supported")
    r = rx
    # recover the center from the chord and flags (circular case)
    mx, my = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    dx, dy = x1 - x0, y1 - y0
    half = math.hypot(dx, dy) / 2.0
    if half == 0.0 or half > r * (1.0 + 1e-9):
        raise DocumentError("path arc radius smaller than half chord")
    h = math.sqrt(max(r * r - half * half, 0.0))
    ux, uy = -dy / (2.0 * half), dx / (2.0 * half)
    if (laf == 1.0) == (sf == 1.0):
        cx, cy = mx + h * ux, my + h * uy
    else:
        cx, cy = mx - h * ux, my - h * uy
    a0 = math.atan2(y0 - cy, x0 - cx)
    a1 = math.atan2(y1 - cy, x1 - cx)
    if sf == 0.0:
        a0, a1 = a1, a0  # store counterclockwise
    return Primitive.arc(cx, cy, r, a0, a1, sem, inst)


def import_svg(data: Union[bytes, str]) -> SvgImport:
    """Parse an SVG subset (line, polyline, circle, ellipse, simple arcs).

    Unsupported elements are skipped and counted; malformed XML is a hard
    error. Annotations travel in data-semantic / data-instance attributes;
    unannotated elements become background. Categories are synthesized for
    the semantic ids encountered.
    """
    try:
        root = ET.fromstring(data)
    except ET.ParseError as e:
        raise DocumentError(f"malformed SVG: {e}") from None

    prims: list[Primitive] = []
    skipped = 0
    for el in root.iter():
        tag = _strip_tag(el.tag)
        try:
            sem, inst = _svg_labels(el)
            if tag == "line":
                x1, y1, x2, y2 = (float(el.get(a, "0")) for a in _SVG_SCALARS["line"])
                prims.append(Primitive.line(x1, y1, x2, y2, sem, inst))
            elif tag == "polyline":
                pts = [float(v) for v in re.split(r"[\s,]+", el.get("points", "").strip()) if v]
                xy = list(zip(pts[0::2], pts[1::2]))
                for (x1, y1), (x2, y2) in zip(xy, xy[1:]):
                    prims.append(Primitive.line(x1, y1, x2, y2, sem, inst))
            elif tag == "circle":
                cx, cy, r = (float(el.get(a, "0")) for a in _SVG_SCALARS["circle"])
                prims.append(Primitive.circle(cx, cy, r, sem, inst))
            elif tag == "ellipse":
                cx, cy, rx, ry = (float(el.get(a, "0")) for a in _SVG_SCALARS["ellipse"])
                prims.append(Primitive.ellipse(cx, cy, rx, ry, 0.0, sem, inst))
            elif tag == "path":
                prims.append(_arc_from_path(el.get("d", ""), sem, inst))
            elif tag in ("svg", "g", "defs", "title", "desc"):
                continue
            else:
                skipped += 1
        except DocumentError:
            skipped += 1

    seen = sorted({p.semantic for p in prims if p.semantic != BACKGROUND})
    has_instance = {s: any(p.semantic == s and p.instance >= 0 for p in prims) for s in seen}
    categories = {
        s: Category(s, f"class_{s}", has_instance[s], _PALETTE[i % len(_PALETTE)])
        for i, s in enumerate(seen)
    }
    width = _svg_len(root.get("width", "0")) or max(
        [max(x for x, _ in p.endpoints) for p in prims], default=1.0)
    height = _svg_len(root.get("height", "0")) or max(
        [max(y for _, y in p.endpoints) for p in prims], default=1.0)
    doc = Document(id=root.get("id", "svg"), width=width, height=height,
                   primitives=tuple(prims), categories=categories)
    validate_document(doc)
    return SvgImport(doc, skipped)


# ---------------------------------------------------------------------------
# Panoptic rendering
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _arc_path_d(p: Primitive) -> str:
    span = (p.a1 - p.a0) % TWO_PI
    large = 1 if span > math.pi else 0
    return (f"M {_fmt(p.v1[0])} {_fmt(p.v1[1])} "
            f"A {_fmt(p.radius)} {_fmt(p.radius)} 0 {large} 1 {_fmt(p.v2[0])} {_fmt(p.v2[1])}")


def render_panoptic(doc: Document, pred: PanopticPrediction) -> bytes:
    """Render a prediction over the document as deterministic SVG bytes.

    Every primitive is stroked in its predicted class color; instances of
    one thing class cycle through dash patterns. Background is light gray.
    """
    if len(pred) != len(doc):
        raise DocumentError(
            f"prediction covers {len(pred)} entities, document has {len(doc)}")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(doc.width)}" '
        f'height="{_fmt(doc.height)}" viewBox="0 0 {_fmt(doc.width)} {_fmt(doc.height)}">'
    ]
    for i, p in enumerate(doc.primitives):
        sem = int(pred.semantics[i])
        inst = int(pred.instances[i])
        cat = doc.categories.get(sem)
        color = cat.color if cat is not None else "#c8c8c8"
        dash = _DASHES[inst % len(_DASHES)] if (cat is not None and cat.is_thing and inst >= 0) else "none"
        style = f'stroke="{color}" stroke-dasharray="{dash}" fill="none" stroke-width="1"'
        if p.kind == "line":
            parts.append(f'<line x1="{_fmt(p.v1[0])}" y1="{_fmt(p.v1[1])}" '
                         f'x2="{_fmt(p.v2[0])}" y2="{_fmt(p.v2[1])}" {style}/>')
        elif p.kind == "circle":
            parts.append(f'<circle cx="{_fmt(p.center[0])}" cy="{_fmt(p.center[1])}" '
                         f'r="{_fmt(p.radius)}" {style}/>')
        elif p.kind == "ellipse":
            deg = math.degrees(p.rotation)
            parts.append(f'<ellipse cx="{_fmt(p.center[0])}" cy="{_fmt(p.center[1])}" '
                         f'rx="{_fmt(p.radii[0])}" ry="{_fmt(p.radii[1])}" '
                         f'transform="rotate({_fmt(deg)} {_fmt(p.center[0])} {_fmt(p.center[1])})" {style}/>')
        else:
            parts.append(f'<path d="{_arc_path_d(p)}" {style}/>')
    parts.append("</svg>")
    return "\n".join(parts).encode("utf-8")
