"""Point encoding: positions, features, and their transform behavior."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointspot.document import Primitive, translated
from pointspot.points import (build_point_set, chord_angle, primitive_feature,
                              primitive_position)
from pointspot.synth import SynthConfig, generate_document, rotate_document, scale_document

TWO_PI = 2 * math.pi


class TestPosition:
    def test_line_midpoint(self):
        assert primitive_position(Primitive.line(0, 0, 2, 2)).tolist() == [1.0, 1.0]

    def test_circle_center(self):
        assert primitive_position(Primitive.circle(3, 4, 1)).tolist() == [3.0, 4.0]

    def test_arc_chord_midpoint(self):
        p = Primitive.arc(0, 0, 1, 0, math.pi)  # chord (1,0)-(-1,0)
        np.testing.assert_allclose(primitive_position(p), [0.0, 0.0], atol=1e-15)


class TestFeature:
    def test_horizontal_line(self):
        f = primitive_feature(Primitive.line(0, 0, 4, 0))
        np.testing.assert_allclose(f, [0.0, 4.0, 1, 0, 0, 0], atol=1e-15)

    def test_clockwise_angle_convention(self):
        # direction (0, -3): a quarter turn clockwise from +x
        f = primitive_feature(Primitive.line(0, 0, 0, -3))
        assert f[0] == pytest.approx(math.pi / 2)
        assert f[1] == pytest.approx(3.0)

    def test_circle_uses_diameter(self):
        f = primitive_feature(Primitive.circle(0, 0, 2))
        np.testing.assert_allclose(f, [0.0, 4.0, 0, 0, 1, 0], atol=1e-15)

    def test_ellipse_uses_major_diameter(self):
        f = primitive_feature(Primitive.ellipse(0, 0, 1.0, 3.0))
        np.testing.assert_allclose(f, [0.0, 6.0, 0, 0, 0, 1], atol=1e-15)

    def test_one_hot_sums_to_one(self):
        for p in (Primitive.line(0, 0, 1, 1), Primitive.arc(0, 0, 1, 0, 1),
                  Primitive.circle(0, 0, 1), Primitive.ellipse(0, 0, 1, 2)):
            assert primitive_feature(p)[2:].sum() == 1.0

    @given(st.floats(-100, 100), st.floats(-100, 100),
           st.floats(-100, 100), st.floats(-100, 100))
    @settings(max_examples=50)
    def test_angle_always_in_range(self, x1, y1, x2, y2):
        if (x1, y1) == (x2, y2):
            return
        a = chord_angle(x2 - x1, y2 - y1)
        assert 0.0 <= a < TWO_PI


class TestBuildPointSet:
    def test_order_and_source_index(self):
        doc = generate_document(SynthConfig(), 0)
        ps = build_point_set(doc)
        assert len(ps) == len(doc)
        assert np.array_equal(ps.source_index, np.arange(len(doc)))

    def test_labels_copied(self):
        doc = generate_document(SynthConfig(), 0)
        ps = build_point_set(doc)
        assert ps.labeled
        assert np.array_equal(ps.semantics, doc.semantics())

    def test_unlabeled_document_has_no_labels(self):
        doc = generate_document(SynthConfig(), 0)
        ps = build_point_set(doc, with_labels=False)
        assert not ps.labeled


def dyadic_document():
    """Coordinates on a 1/64 grid: exact under integer-offset arithmetic."""
    prims = (
        Primitive.line(0.25, 0.5, 10.75, 8.015625),
        Primitive.line(3.5, 3.5, 3.5, -2.25),
        Primitive.circle(5.0, 5.0, 2.5),
        Primitive.arc(1.0, 1.0, 2.0, 0.0, math.pi / 3),
        Primitive.ellipse(7.25, 2.0, 3.0, 1.5, 0.25),
    )
    from pointspot.document import Document
    return Document(id="dyadic", width=16, height=16, primitives=prims, categories={})


class TestTransformBehavior:
    def test_translation_invariance_exact(self):
        doc = dyadic_document()
        base = build_point_set(doc)
        moved = build_point_set(translated(doc, 10.0, 10.0))
        assert np.array_equal(base.features, moved.features)
        # exact position shift on dyadic endpoints; the arc's chord endpoints
        # come from cos/sin, so its midpoint is held to float accuracy only
        delta = moved.positions - base.positions
        exact = [i for i, p in enumerate(doc.primitives) if p.kind != "arc"]
        np.testing.assert_allclose(delta[exact], 10.0, atol=0)
        np.testing.assert_allclose(delta, 10.0, atol=1e-9)

    def test_rotation_covariance(self):
        doc = generate_document(SynthConfig(), 3)
        base = build_point_set(doc)
        theta = 0.7
        rot = build_point_set(rotate_document(doc, theta))
        open_kind = base.features[:, 2] + base.features[:, 3] > 0  # line or arc
        expected = np.mod(base.features[open_kind, 0] - theta, TWO_PI)
        got = rot.features[open_kind, 0]
        diff = np.abs(np.mod(got - expected + math.pi, TWO_PI) - math.pi)
        assert diff.max() < 1e-9
        np.testing.assert_allclose(rot.features[:, 1], base.features[:, 1], rtol=1e-9)
        assert np.array_equal(rot.features[:, 2:], base.features[:, 2:])

    def test_uniform_scale_covariance(self):
        doc = generate_document(SynthConfig(), 4)
        base = build_point_set(doc)
        scaled = build_point_set(scale_document(doc, 2.0))
        np.testing.assert_allclose(scaled.features[:, 1], 2.0 * base.features[:, 1], rtol=1e-12)
        np.testing.assert_allclose(scaled.positions, 2.0 * base.positions, rtol=1e-12)
        np.testing.assert_allclose(scaled.features[:, 0], base.features[:, 0], atol=1e-12)
