"""Spotting head: mask prediction, attention-mask downsampling, assembly."""

import math

import numpy as np
import pytest

from pointspot import autodiff as ad
from pointspot.autodiff import Tensor
from pointspot.backbone import Backbone, BackboneConfig, plan_geometry
from pointspot.document import Category
from pointspot.head import (NEG_MASK, HeadConfig, HeadError, QueryDecoderLayer,
                            ScaledDotAttention, SpottingHead, assemble_panoptic,
                            attention_mask_for_level, bilinear_mask_downsample,
                            knn_interpolate_mask, threshold_attention_mask)
from pointspot.points import PointSet
from pointspot.synth import SynthConfig, generate_document
from pointspot.points import build_point_set

BB = BackboneConfig(channels=(8, 16, 32, 64), k_nn=4)
HC = HeadConfig(num_queries=4, dim=16)


def brute_knn_interp(mask0, coords0, coords_r, k):
    out = np.zeros((mask0.shape[0], len(coords_r)))
    for t, c in enumerate(coords_r):
        d = sorted((math.dist(c, s), j) for j, s in enumerate(coords0))[:k]
        if d[0][0] < 1e-8:
            out[:, t] = mask0[:, d[0][1]]
        else:
            wsum = sum(1.0 / dist for dist, _ in d)
            out[:, t] = sum(mask0[:, j] / dist for dist, j in d) / wsum
    return out


class TestKnnInterpolateMask:
    def test_k_one_copies_nearest(self):
        coords0 = np.array([[0.0, 0.0], [10.0, 0.0]])
        mask = np.array([[0.2, 0.9]])
        out = knn_interpolate_mask(mask, coords0, np.array([[1.0, 0.0]]), r=0)
        assert out[0, 0] == pytest.approx(0.2, abs=1e-12)

    def test_equidistant_sources_average(self):
        coords0 = np.array([[0.0, 0.0], [2.0, 0.0], [50.0, 50.0], [51.0, 50.0]])
        mask = np.array([[1.0, 0.0, 0.0, 0.0]])
        out = knn_interpolate_mask(mask, coords0, np.array([[1.0, 0.0]]), r=1)
        # K=4 includes the two far points with tiny weight; compare to oracle
        expected = brute_knn_interp(mask, coords0, np.array([[1.0, 0.0]]), 4)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_distance_weighting_hand_case(self):
        coords0 = np.array([[1.0, 0.0], [-3.0, 0.0]])
        mask = np.array([[1.0, 0.0]])
        out = knn_interpolate_mask(mask, coords0, np.array([[0.0, 0.0]]), r=1)
        # K clamps to 2 sources at distances (1, 3): 0.75
        assert out[0, 0] == pytest.approx(0.75, abs=1e-12)

    def test_matches_oracle_on_random_sets(self, rng):
        for _ in range(20):
            ns = int(rng.integers(4, 30))
            nt = int(rng.integers(1, 10))
            coords0 = rng.uniform(0, 20, (ns, 2))
            coords_r = rng.uniform(0, 20, (nt, 2))
            mask = rng.uniform(0, 1, (3, ns))
            r = int(rng.integers(0, 3))
            k = min(4 ** r, ns)
            out = knn_interpolate_mask(mask, coords0, coords_r, r)
            np.testing.assert_allclose(out, brute_knn_interp(mask, coords0, coords_r, k),
                                       atol=1e-12)

    def test_values_stay_in_convex_hull(self, rng):
        coords0 = rng.uniform(0, 20, (40, 2))
        coords_r = rng.uniform(0, 20, (10, 2))
        mask = rng.uniform(0.2, 0.8, (2, 40))
        out = knn_interpolate_mask(mask, coords0, coords_r, r=2)
        assert (out >= mask.min() - 1e-12).all() and (out <= mask.max() + 1e-12).all()

    def test_clamp_warns(self, rng):
        with pytest.warns(UserWarning, match="clamped"):
            knn_interpolate_mask(np.ones((1, 3)), rng.uniform(0, 1, (3, 2)),
                                 rng.uniform(0, 1, (2, 2)), r=2)


class TestThreshold:
    def test_above_half_visible(self):
        np.testing.assert_array_equal(threshold_attention_mask(np.array([0.6])), [0.0])

    def test_exactly_half_hidden(self):
        np.testing.assert_array_equal(threshold_attention_mask(np.array([0.5])), [NEG_MASK])

    def test_idempotent_on_binary(self):
        row = np.array([0.0, 1.0, 1.0, 0.0])
        once = threshold_attention_mask(row)
        visible = (once == 0.0).astype(float)
        np.testing.assert_array_equal(threshold_attention_mask(visible), once)

    def test_dead_rows_fall_back_to_visible(self, rng):
        coords = rng.uniform(0, 10, (6, 2))
        mask0 = np.zeros((2, 6))  # nothing visible anywhere
        a = attention_mask_for_level(mask0, coords, coords[:3], r=0, mode="knn_interp")
        np.testing.assert_array_equal(a, np.zeros((2, 3)))


class TestBilinearSurrogate:
    def test_shape_and_range(self, rng):
        coords0 = rng.uniform(0, 30, (50, 2))
        coords_r = rng.uniform(0, 30, (12, 2))
        mask = rng.uniform(0, 1, (3, 50))
        out = bilinear_mask_downsample(mask, coords0, coords_r)
        assert out.shape == (3, 12)
        assert (out >= 0).all() and (out <= 1 + 1e-12).all()

    def test_loses_detail_vs_knn(self, rng):
        # a sharp one-point mask should survive knn interp (r=0 copies) better
        coords0 = rng.uniform(0, 30, (64, 2))
        mask = np.zeros((1, 64))
        mask[0, 10] = 1.0
        knn_out = knn_interpolate_mask(mask, coords0, coords0, r=0)
        assert knn_out.max() == pytest.approx(1.0)


class TestDecoderLayer:
    def test_zero_mask_equals_unmasked(self, rng):
        layer = QueryDecoderLayer(8, rng)
        q = Tensor(rng.normal(size=(3, 8)).astype(np.float32))
        f = Tensor(rng.normal(size=(10, 8)).astype(np.float32))
        pos = Tensor(rng.normal(size=(3, 8)).astype(np.float32))
        out_zero = layer(q, f, np.zeros((3, 10)), pos)
        out_none = layer(q, f, None, pos)
        np.testing.assert_array_equal(out_zero.data, out_none.data)

    def test_all_but_one_masked_selects_that_key(self, rng):
        attn = ScaledDotAttention(4, rng)
        q = Tensor(rng.normal(size=(1, 4)).astype(np.float32))
        f = Tensor(rng.normal(size=(5, 4)).astype(np.float32))
        mask = np.full((1, 5), NEG_MASK)
        mask[0, 2] = 0.0
        out = attn(q, f, mask)
        only_key = attn(q, Tensor(f.data[2:3]), None)
        np.testing.assert_allclose(out.data, only_key.data, atol=1e-6)

    def test_hand_computed_cross_attention(self):
        # O=1, N=2, every projection the identity: softmax over q.k logits
        rng = np.random.default_rng(0)
        attn = ScaledDotAttention(2, rng)
        for lin in (attn.wq, attn.wk, attn.wv, attn.wo):
            lin.w.data = np.eye(2, dtype=np.float32)
            lin.b.data = np.zeros(2, dtype=np.float32)
        q = np.array([[1.0, 0.0]], dtype=np.float32)
        keys = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        out = attn(Tensor(q), Tensor(keys), None)
        logits = (q @ keys.T) / math.sqrt(2)
        w = np.exp(logits - logits.max())
        w /= w.sum()
        expected = w @ keys
        np.testing.assert_allclose(out.data, expected, atol=1e-6)


def tiny_pyramid(rng, n0=24):
    doc = generate_document(SynthConfig(symbols_min=3, symbols_max=4,
                                        clutter_min=2, clutter_max=3), 0)
    ps = build_point_set(doc)
    bb = Backbone(BB, rng)
    plan = plan_geometry(ps, None, BB, seed=0)
    return bb(ps, None, scale=doc.diagonal, plan=plan), doc


class TestHeadForward:
    def test_update_count_scales_with_layers(self, rng):
        pyramid, _ = tiny_pyramid(rng)
        for layers, expected_steps in ((1, 1 + 4), (3, 1 + 12)):
            head = SpottingHead(HeadConfig(num_queries=4, dim=16, layers=layers),
                                num_classes=3, level_dims=BB.channels, rng=rng)
            out = head(pyramid)
            assert len(out.steps) == expected_steps

    def test_shared_weights_parameter_count_independent_of_layers(self, rng):
        counts = []
        for layers in (1, 3):
            head = SpottingHead(HeadConfig(num_queries=4, dim=16, layers=layers,
                                           share_weights=True),
                                num_classes=3, level_dims=BB.channels, rng=rng)
            counts.append(sum(p.size for p in head.parameters().values()))
        assert counts[0] == counts[1]

    def test_unshared_weights_grow_with_layers(self, rng):
        counts = []
        for layers in (1, 3):
            head = SpottingHead(HeadConfig(num_queries=4, dim=16, layers=layers,
                                           share_weights=False),
                                num_classes=3, level_dims=BB.channels, rng=rng)
            counts.append(sum(p.size for p in head.parameters().values()))
        assert counts[1] > counts[0]

    def test_class_rows_sum_to_one_and_masks_in_range(self, rng):
        pyramid, _ = tiny_pyramid(rng)
        head = SpottingHead(HC, num_classes=3, level_dims=BB.channels, rng=rng)
        out = head(pyramid)
        for step in out.steps:
            np.testing.assert_allclose(step.classes.data.sum(-1), 1.0, atol=1e-6)
            assert (step.masks.data >= 0).all() and (step.masks.data <= 1).all()

    def test_all_visible_masks_equal_unmasked_run(self, rng):
        pyramid, _ = tiny_pyramid(rng)
        head = SpottingHead(HC, num_classes=3, level_dims=BB.channels, rng=rng)
        # force every predicted mask to 1: constant positive mask features
        # against a constant positive query embedding
        head.mask_head.fc2.w.data[:] = 0.0
        head.mask_head.fc2.b.data[:] = 1.0
        head.mask_proj.w.data[:] = 0.0
        head.mask_proj.b.data[:] = 1.0
        masked = head(pyramid)
        assert (masked.final.masks.data > 0.5).all()
        unmasked = head(pyramid, force_visible=True)
        np.testing.assert_array_equal(masked.final.class_logits.data,
                                      unmasked.final.class_logits.data)

    def test_too_few_levels_rejected(self, rng):
        pyramid, _ = tiny_pyramid(rng)
        head = SpottingHead(HC, num_classes=3, level_dims=BB.channels, rng=rng)
        pyramid.features = pyramid.features[:3]
        pyramid.coords = pyramid.coords[:3]
        with pytest.raises(HeadError, match="levels"):
            head(pyramid)
        with pytest.raises(HeadError, match="levels"):
            SpottingHead(HC, num_classes=3, level_dims=BB.channels[:3], rng=rng)

    def test_mask_prediction_at_zero_logits_is_half(self, rng):
        pyramid, _ = tiny_pyramid(rng)
        head = SpottingHead(HC, num_classes=3, level_dims=BB.channels, rng=rng)
        head.mask_head.fc2.w.data[:] = 0.0
        head.mask_head.fc2.b.data[:] = 0.0
        step = head.predict(head.query_embed, Tensor(
            rng.normal(size=(10, HC.dim)).astype(np.float32)))
        np.testing.assert_allclose(step.masks.data, 0.5, atol=1e-7)


CATS = {1: Category(1, "door", True, "#e6194b"),
        2: Category(2, "wall", False, "#111111")}


class TestAssemblePanoptic:
    def test_single_confident_query(self):
        classes = np.array([[0.9, 0.05, 0.05],   # door
                            [0.05, 0.05, 0.9]])  # no-object
        masks = np.array([[0.9, 0.8, 0.1],
                          [0.9, 0.9, 0.9]])
        pred = assemble_panoptic(classes, masks, CATS, [1, 2], "d")
        assert pred.semantics.tolist() == [1, 1, -1]
        assert pred.instances.tolist() == [0, 0, -1]

    def test_all_no_object_gives_background(self):
        classes = np.array([[0.1, 0.1, 0.8], [0.2, 0.1, 0.7]])
        masks = np.ones((2, 4))
        pred = assemble_panoptic(classes, masks, CATS, [1, 2], "d")
        assert (pred.semantics == -1).all()
        assert (pred.instances == -1).all()

    def test_stuff_queries_merge(self):
        classes = np.array([[0.1, 0.8, 0.1], [0.1, 0.8, 0.1]])
        masks = np.array([[0.9, 0.9, 0.0, 0.0],
                          [0.0, 0.0, 0.9, 0.9]])
        pred = assemble_panoptic(classes, masks, CATS, [1, 2], "d")
        assert pred.semantics.tolist() == [2, 2, 2, 2]
        assert pred.instances.tolist() == [-1, -1, -1, -1]
        from pointspot.metrics import extract_segments
        segs = extract_segments(pred.semantics, pred.instances, CATS)
        assert len(segs) == 1

    def test_point_follows_best_score(self):
        classes = np.array([[0.9, 0.05, 0.05], [0.6, 0.2, 0.2]])
        masks = np.array([[0.7, 0.7], [0.9, 0.51]])
        pred = assemble_panoptic(classes, masks, CATS, [1, 2], "d")
        # scores: q0 = 0.9*0.7 = 0.63; q1 = 0.6*0.9 = 0.54 on point 0
        assert pred.semantics.tolist() == [1, 1]
        assert pred.instances.tolist() == [0, 0]  # same class instances merge per query
        # point 0 belongs to q0 (0.63 > 0.54), point 1 to q0 (0.63*... )

    def test_two_door_queries_get_distinct_instances(self):
        classes = np.array([[0.9, 0.05, 0.05], [0.9, 0.05, 0.05]])
        masks = np.array([[0.9, 0.9, 0.0, 0.0],
                          [0.0, 0.0, 0.9, 0.9]])
        pred = assemble_panoptic(classes, masks, CATS, [1, 2], "d")
        assert pred.semantics.tolist() == [1, 1, 1, 1]
        assert sorted(set(pred.instances.tolist())) == [0, 1]

    def test_threshold_is_strict(self):
        classes = np.array([[0.9, 0.05, 0.05]])
        masks = np.array([[0.5, 0.51]])
        pred = assemble_panoptic(classes, masks, CATS, [1, 2], "d")
        assert pred.semantics.tolist() == [-1, 1]
