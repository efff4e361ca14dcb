"""Metric suite: log-length IoU, matching, quality scores, F1."""

import itertools
import math

import numpy as np
import pytest

from pointspot.document import Category, PanopticPrediction
from pointspot.metrics import (PanopticStats, SymbolSegment, aggregate_scores,
                               corpus_f1, evaluate_document, extract_segments,
                               match_segments, metrics_report, panoptic_quality,
                               primitive_iou, score_from_stats, semantic_f1)
from pointspot.synth import SynthConfig, generate_document

CATS = {1: Category(1, "door", True, "#e6194b"),
        2: Category(2, "wall", False, "#111111")}


def seg(sem, inst, members):
    return SymbolSegment(sem, inst, tuple(members))


class TestPrimitiveIou:
    def test_identical_is_one(self):
        lengths = np.array([1.0, 2.0, 3.0])
        s = seg(1, 0, [0, 1])
        assert primitive_iou(s, s, lengths) == 1.0

    def test_disjoint_is_zero(self):
        lengths = np.ones(4)
        assert primitive_iou(seg(1, 0, [0, 1]), seg(1, 1, [2, 3]), lengths) == 0.0

    def test_worked_log_length_example(self):
        # pred {e0: L=1, e1: L=3}, gt {e0, e2: L=1}:
        # ln2 / (2 ln2 + ln4) = 0.25
        lengths = np.array([1.0, 3.0, 1.0])
        iou = primitive_iou(seg(1, 0, [0, 1]), seg(1, 1, [0, 2]), lengths)
        assert iou == pytest.approx(0.25, abs=1e-12)


class TestMatchSegments:
    def brute_force(self, preds, gts, lengths):
        """Maximum-cardinality matching over same-label pairs with IoU > 0.5."""
        cand = [(pi, gi) for pi, p in enumerate(preds) for gi, g in enumerate(gts)
                if p.semantic == g.semantic and primitive_iou(p, g, lengths) > 0.5]
        best = []
        for r in range(min(len(preds), len(gts)), 0, -1):
            for combo in itertools.combinations(cand, r):
                ps = [c[0] for c in combo]
                gs = [c[1] for c in combo]
                if len(set(ps)) == r and len(set(gs)) == r:
                    return combo
        return tuple(best)

    def test_perfect_prediction_all_tp(self):
        lengths = np.ones(6)
        gts = [seg(1, 0, [0, 1]), seg(1, 1, [2, 3]), seg(2, -1, [4, 5])]
        matched, fp, fn = match_segments(gts, gts, lengths)
        assert len(matched) == 3 and not fp and not fn
        assert all(iou == 1.0 for _, _, iou in matched)

    def test_exactly_half_iou_unmatched(self):
        lengths = np.ones(4)  # log weights equal: IoU = |inter|/|union|
        pred = seg(1, 0, [0, 1])
        gt = seg(1, 0, [0, 1, 2, 3])  # inter 2, union 4 -> 0.5 exactly
        matched, fp, fn = match_segments([pred], [gt], lengths)
        assert not matched and fp == [0] and fn == [0]

    def test_label_gate(self):
        lengths = np.ones(2)
        matched, fp, fn = match_segments([seg(1, 0, [0, 1])], [seg(2, -1, [0, 1])], lengths)
        assert not matched and fp == [0] and fn == [0]

    def test_matches_brute_force_on_random_partitions(self, rng):
        for trial in range(30):
            n = 12
            lengths = rng.uniform(0.5, 5.0, n)
            gt_sem = rng.integers(1, 3, n)
            gt_inst = rng.integers(0, 3, n)
            pr_sem = np.where(rng.uniform(size=n) < 0.7, gt_sem, rng.integers(1, 3, n))
            pr_inst = np.where(rng.uniform(size=n) < 0.7, gt_inst, rng.integers(0, 3, n))
            gts = extract_segments(gt_sem, gt_inst, CATS)
            preds = extract_segments(pr_sem, pr_inst, CATS)
            matched, fp, fn = match_segments(preds, gts, lengths)
            brute = self.brute_force(preds, gts, lengths)
            assert len(matched) == len(brute)
            assert {(p, g) for p, g, _ in matched} == set(brute)


class TestPanopticQuality:
    def test_single_perfect_tp(self):
        s = panoptic_quality([1.0], 0, 0)
        assert (s.pq, s.sq, s.rq) == (1.0, 1.0, 1.0)

    def test_worked_example(self):
        s = panoptic_quality([0.8], 0, 1)
        assert s.rq == pytest.approx(2 / 3, abs=1e-12)
        assert s.sq == pytest.approx(0.8, abs=1e-12)
        assert s.pq == pytest.approx(0.8 * 2 / 3, abs=1e-12)
        assert s.pq == pytest.approx(0.53333333333, abs=1e-9)

    def test_empty_is_zero(self):
        s = panoptic_quality([], 0, 0)
        assert (s.pq, s.sq, s.rq) == (0.0, 0.0, 0.0)

    def test_pq_identity(self, rng):
        for _ in range(20):
            ious = rng.uniform(0.5, 1.0, rng.integers(1, 10)).tolist()
            s = panoptic_quality(ious, int(rng.integers(0, 5)), int(rng.integers(0, 5)))
            assert abs(s.pq - s.sq * s.rq) < 1e-12


class TestSemanticF1:
    def test_all_correct(self):
        f1, wf1 = semantic_f1([1, 2, 1], [1, 2, 1], [1.0, 1.0, 1.0])
        assert f1 == 1.0 and wf1 == 1.0

    def test_half_correct(self):
        f1, _ = semantic_f1([1, 2], [1, 1], [1.0, 1.0])
        assert f1 == pytest.approx(0.5)

    def test_length_weighting(self):
        # lengths (1, 3), only the long entity correct: wF1 = 0.75
        _, wf1 = semantic_f1([2, 1], [1, 1], [1.0, 3.0])
        assert wf1 == pytest.approx(0.75)

    def test_background_excluded(self):
        f1, _ = semantic_f1([-1, 1], [-1, 1], [1.0, 1.0])
        assert f1 == 1.0

    def test_background_false_positive_hits_precision(self):
        f1, _ = semantic_f1([1, 1], [1, -1], [1.0, 1.0])
        # precision 1/2, recall 1/1
        assert f1 == pytest.approx(2 * 0.5 / 1.5)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            semantic_f1([1], [1, 2], [1.0, 1.0])


class TestAggregate:
    def doc_stats(self, tp_ious, fp, fn, cls=1):
        s = PanopticStats()
        for iou in tp_ious:
            s._bump(s.tp, cls)
            s._bump(s.iou_sum, cls, iou)
        for _ in range(fp):
            s._bump(s.fp, cls)
        for _ in range(fn):
            s._bump(s.fn, cls)
        return s

    def test_single_document_identity(self):
        pooled = aggregate_scores([self.doc_stats([0.9], 1, 0)])
        score = score_from_stats(pooled)
        direct = panoptic_quality([0.9], 1, 0)
        assert score.pq == pytest.approx(direct.pq, abs=1e-12)

    def test_two_identical_documents_same_pq(self):
        one = score_from_stats(aggregate_scores([self.doc_stats([0.8], 1, 1)]))
        two = score_from_stats(aggregate_scores([self.doc_stats([0.8], 1, 1),
                                                 self.doc_stats([0.8], 1, 1)]))
        assert one.pq == pytest.approx(two.pq, abs=1e-12)

    def test_pooled_worked_example(self):
        # doc A: TP@0.8 + one FN; doc B: TP@1.0
        pooled = aggregate_scores([self.doc_stats([0.8], 0, 1), self.doc_stats([1.0], 0, 0)])
        score = score_from_stats(pooled)
        assert score.rq == pytest.approx(0.8, abs=1e-12)
        assert score.sq == pytest.approx(0.9, abs=1e-12)
        assert score.pq == pytest.approx(0.72, abs=1e-12)


class TestEndToEnd:
    @pytest.mark.parametrize("seed", range(5))
    def test_ground_truth_scores_one(self, seed):
        doc = generate_document(SynthConfig(), seed)
        pred = PanopticPrediction.from_document(doc)
        stats = evaluate_document(doc, pred)
        score = score_from_stats(stats)
        assert score.pq == pytest.approx(1.0, abs=1e-12)
        assert score.rq == 1.0 and score.sq == pytest.approx(1.0, abs=1e-12)
        f1, wf1 = corpus_f1(stats)
        assert f1 == 1.0 and wf1 == 1.0

    def test_instance_permutation_invariance(self):
        doc = generate_document(SynthConfig(), 7)
        sem = doc.semantics()
        inst = doc.instances()
        remapped = inst.copy()
        for cls in np.unique(sem[sem > 0]):
            cat = doc.categories[int(cls)]
            if not cat.is_thing:
                continue
            ids = np.unique(inst[(sem == cls) & (inst >= 0)])
            perm = {int(a): int(b) for a, b in zip(ids, np.roll(ids, 1))}
            for i in np.flatnonzero(sem == cls):
                if inst[i] >= 0:
                    remapped[i] = perm[int(inst[i])]
        pred = PanopticPrediction(doc.id, sem, remapped)
        score = score_from_stats(evaluate_document(doc, pred))
        assert score.pq == pytest.approx(1.0, abs=1e-12)

    def test_report_structure(self):
        doc = generate_document(SynthConfig(), 3)
        stats = evaluate_document(doc, PanopticPrediction.from_document(doc))
        report = metrics_report(stats, doc.categories)
        for key in ("PQ", "SQ", "RQ", "F1", "wF1", "TP", "FP", "FN", "per_class"):
            assert key in report
        assert all({"id", "name", "PQ", "SQ", "RQ"} <= set(r) for r in report["per_class"])

    def test_length_mismatch_rejected(self):
        doc = generate_document(SynthConfig(), 1)
        short = PanopticPrediction(doc.id, np.array([1]), np.array([0]))
        with pytest.raises(ValueError, match="covers"):
            evaluate_document(doc, short)
