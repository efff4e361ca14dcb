"""Panoptic symbol-spotting metrics.

A symbol segment is a set of entity indices sharing (label, instance);
stuff entities of one class merge into a single segment per document and
background entities are excluded. Segment overlap uses log-length weights:
IoU = sum log(1 + L(e)) over the intersection / same over the union
(natural log). A predicted segment matches a ground-truth segment when the
labels agree and IoU > 0.5 (strict); such matches are unique, so greedy
assignment is exact.

Quality scores: RQ = |TP| / (|TP| + |FP|/2 + |FN|/2), SQ = mean matched
IoU, PQ = SQ * RQ; all zero when nothing matches. Corpus scores pool
TP/FP/FN and IoU sums over documents before the ratios. Semantic F1 is
micro precision/recall over non-background entities; wF1 weights each
entity by its length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .document import BACKGROUND, Category, Document, PanopticPrediction, segments_from_labels


@dataclass(frozen=True)
class SymbolSegment:
    """One symbol: a labeled group of entity indices."""

    semantic: int
    instance: int
    members: tuple

    def __post_init__(self):
        if len(self.members) == 0:
            raise ValueError("segment must have members")


def extract_segments(semantics: Sequence[int], instances: Sequence[int],
                     categories: dict[int, Category]) -> list:
    return [SymbolSegment(sem, inst, tuple(members))
            for sem, inst, members in segments_from_labels(semantics, instances, categories)]


def primitive_iou(pred: SymbolSegment, gt: SymbolSegment, lengths: np.ndarray) -> float:
    """Log-length-weighted IoU of two segments (intersection by entity index)."""
    p = set(pred.members)
    g = set(gt.members)
    logw = np.log1p(lengths)
    inter = sum(logw[i] for i in p & g)
    union = sum(logw[i] for i in p | g)
    return inter / union if union > 0 else 0.0


@dataclass
class PanopticStats:
    """Pooled per-class counts; add documents, then read scores."""

    tp: dict = field(default_factory=dict)
    fp: dict = field(default_factory=dict)
    fn: dict = field(default_factory=dict)
    iou_sum: dict = field(default_factory=dict)
    # entity-level counters for F1 / wF1
    ent_tp: float = 0.0
    ent_pred: float = 0.0
    ent_gt: float = 0.0
    went_tp: float = 0.0
    went_pred: float = 0.0
    went_gt: float = 0.0

    def _bump(self, table: dict, key: int, value=1) -> None:
        table[key] = table.get(key, 0) + value

    def merge(self, other: "PanopticStats") -> None:
        for table, src in ((self.tp, other.tp), (self.fp, other.fp),
                           (self.fn, other.fn), (self.iou_sum, other.iou_sum)):
            for k, v in src.items():
                table[k] = table.get(k, 0) + v
        self.ent_tp += other.ent_tp
        self.ent_pred += other.ent_pred
        self.ent_gt += other.ent_gt
        self.went_tp += other.went_tp
        self.went_pred += other.went_pred
        self.went_gt += other.went_gt


def match_segments(pred_segments: Sequence[SymbolSegment], gt_segments: Sequence[SymbolSegment],
                   lengths: np.ndarray) -> tuple:
    """(matched (pred, gt, iou) triples, unmatched pred indices, unmatched gt indices)."""
    matched = []
    used_gt = set()
    used_pred = set()
    for pi, p in enumerate(pred_segments):
        for gi, g in enumerate(gt_segments):
            if gi in used_gt or p.semantic != g.semantic:
                continue
            iou = primitive_iou(p, g, lengths)
            if iou > 0.5:
                matched.append((pi, gi, iou))
                used_gt.add(gi)
                used_pred.add(pi)
                break
    fp = [pi for pi in range(len(pred_segments)) if pi not in used_pred]
    fn = [gi for gi in range(len(gt_segments)) if gi not in used_gt]
    return matched, fp, fn


@dataclass(frozen=True)
class PanopticScore:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int
    per_class: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"PQ": self.pq, "SQ": self.sq, "RQ": self.rq,
                "TP": self.tp, "FP": self.fp, "FN": self.fn}


def panoptic_quality(tp_ious: Sequence[float], fp: int, fn: int) -> PanopticScore:
    """Scores from matched IoUs and error counts; empty input scores zero."""
    tp = len(tp_ious)
    if tp == 0:
        rq = sq = pq = 0.0
    else:
        rq = tp / (tp + 0.5 * fp + 0.5 * fn)
        sq = float(sum(tp_ious)) / tp
        pq = sq * rq
    return PanopticScore(pq=pq, sq=sq, rq=rq, tp=tp, fp=int(fp), fn=int(fn))


def evaluate_document(doc: Document, pred: PanopticPrediction) -> PanopticStats:
    """Match one prediction against one document's annotation."""
    if len(pred) != len(doc):
        raise ValueError(f"prediction covers {len(pred)} entities, document has {len(doc)}")
    lengths = doc.arc_lengths()
    gt_sem = doc.semantics()
    gt_segments = extract_segments(gt_sem, doc.instances(), doc.categories)
    pred_segments = extract_segments(pred.semantics, pred.instances, doc.categories)
    matched, fp, fn = match_segments(pred_segments, gt_segments, lengths)

    stats = PanopticStats()
    for pi, gi, iou in matched:
        cls = gt_segments[gi].semantic
        stats._bump(stats.tp, cls)
        stats._bump(stats.iou_sum, cls, iou)
    for pi in fp:
        stats._bump(stats.fp, pred_segments[pi].semantic)
    for gi in fn:
        stats._bump(stats.fn, gt_segments[gi].semantic)

    pred_fg = pred.semantics != BACKGROUND
    gt_fg = gt_sem != BACKGROUND
    correct = pred_fg & gt_fg & (pred.semantics == gt_sem)
    stats.ent_tp = float(np.count_nonzero(correct))
    stats.ent_pred = float(np.count_nonzero(pred_fg))
    stats.ent_gt = float(np.count_nonzero(gt_fg))
    stats.went_tp = float(lengths[correct].sum())
    stats.went_pred = float(lengths[pred_fg].sum())
    stats.went_gt = float(lengths[gt_fg].sum())
    return stats


def semantic_f1(pred_semantics: Sequence[int], gt_semantics: Sequence[int],
                lengths: Sequence[float]) -> tuple:
    """(F1, wF1): micro scores over non-background entities."""
    p = np.asarray(pred_semantics)
    g = np.asarray(gt_semantics)
    w = np.asarray(lengths, dtype=np.float64)
    if not (p.shape == g.shape == w.shape):
        raise ValueError("label/length sequences must align")
    pred_fg = p != BACKGROUND
    gt_fg = g != BACKGROUND
    correct = pred_fg & gt_fg & (p == g)

    def f1_of(tp: float, npred: float, ngt: float) -> float:
        if tp == 0 or npred == 0 or ngt == 0:
            return 0.0
        prec = tp / npred
        rec = tp / ngt
        return 2 * prec * rec / (prec + rec)

    f1 = f1_of(float(np.count_nonzero(correct)), float(np.count_nonzero(pred_fg)),
               float(np.count_nonzero(gt_fg)))
    wf1 = f1_of(float(w[correct].sum()), float(w[pred_fg].sum()), float(w[gt_fg].sum()))
    return f1, wf1


def score_from_stats(stats: PanopticStats) -> PanopticScore:
    """Corpus scores from pooled counts, with a per-class breakdown."""
    classes = sorted(set(stats.tp) | set(stats.fp) | set(stats.fn))
    per_class = {}
    for c in classes:
        tp = stats.tp.get(c, 0)
        if tp == 0:
            per_class[c] = PanopticScore(0.0, 0.0, 0.0, 0, stats.fp.get(c, 0), stats.fn.get(c, 0))
        else:
            rq = tp / (tp + 0.5 * stats.fp.get(c, 0) + 0.5 * stats.fn.get(c, 0))
            sq = stats.iou_sum.get(c, 0.0) / tp
            per_class[c] = PanopticScore(sq * rq, sq, rq, tp,
                                         stats.fp.get(c, 0), stats.fn.get(c, 0))
    tp_total = sum(stats.tp.values())
    fp_total = sum(stats.fp.values())
    fn_total = sum(stats.fn.values())
    iou_total = sum(stats.iou_sum.values())
    if tp_total == 0:
        overall = PanopticScore(0.0, 0.0, 0.0, 0, fp_total, fn_total, per_class)
    else:
        rq = tp_total / (tp_total + 0.5 * fp_total + 0.5 * fn_total)
        sq = iou_total / tp_total
        overall = PanopticScore(sq * rq, sq, rq, tp_total, fp_total, fn_total, per_class)
    return overall


def aggregate_scores(doc_stats: Sequence[PanopticStats]) -> PanopticStats:
    """Pool per-document stats (counts and IoU sums, never averages)."""
    pooled = PanopticStats()
    for s in doc_stats:
        pooled.merge(s)
    return pooled


def corpus_f1(stats: PanopticStats) -> tuple:
    def f1_of(tp: float, npred: float, ngt: float) -> float:
        if tp == 0 or npred == 0 or ngt == 0:
            return 0.0
        prec = tp / npred
        rec = tp / ngt
        return 2 * prec * rec / (prec + rec)

    return (f1_of(stats.ent_tp, stats.ent_pred, stats.ent_gt),
            f1_of(stats.went_tp, stats.went_pred, stats.went_gt))


def metrics_report(stats: PanopticStats, categories: Optional[dict] = None) -> dict:
    """JSON-ready corpus report: overall PQ/SQ/RQ/F1/wF1 plus per-class rows."""
    score = score_from_stats(stats)
    f1, wf1 = corpus_f1(stats)
    rows = []
    for cid, sc in sorted(score.per_class.items()):
        name = categories[cid].name if categories and cid in categories else str(cid)
        rows.append({"id": cid, "name": name, "PQ": sc.pq, "SQ": sc.sq, "RQ": sc.rq,
                     "TP": sc.tp, "FP": sc.fp, "FN": sc.fn})
    out = score.as_dict()
    out["F1"] = f1
    out["wF1"] = wf1
    out["per_class"] = rows
    return out
