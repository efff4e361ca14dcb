"""Connection graph construction against a quadratic endpoint oracle."""

import math

import numpy as np
import pytest

from pointspot.conngraph import (ConnectionGraph, build_connections,
                                 connection_stats, raw_connections)
from pointspot.document import Category, Document, Primitive
from pointspot.synth import SynthConfig, generate_document


def make_doc(prims):
    return Document(id="t", width=100, height=100, primitives=tuple(prims), categories={})


def star_doc(n=12):
    prims = [Primitive.line(0.0, 0.0, 10 * math.cos(2 * math.pi * i / n),
                            10 * math.sin(2 * math.pi * i / n)) for i in range(n)]
    return make_doc(prims)


def oracle_adjacency(doc, eps):
    """All-pairs, all-endpoint-combinations reference."""
    n = len(doc)
    adj = [set() for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            close = any(
                math.dist(a, b) < eps
                for a in doc.primitives[i].endpoints
                for b in doc.primitives[j].endpoints
            )
            if close:
                adj[i].add(j)
                adj[j].add(i)
    return adj


class TestThreshold:
    def test_shared_endpoint_connects(self):
        doc = make_doc([Primitive.line(0, 0, 1, 1), Primitive.line(1, 1, 2, 0)])
        g = build_connections(doc, epsilon=1.0, cap=8, seed=0)
        assert g.neighbors[0] == (1,) and g.neighbors[1] == (0,)

    def test_beyond_threshold_not_connected(self):
        doc = make_doc([Primitive.line(0, 0, 1, 0), Primitive.line(3, 0, 4, 0)])
        g = build_connections(doc, epsilon=1.0, cap=8, seed=0)
        assert g.is_empty()

    def test_closed_kind_uses_center(self):
        doc = make_doc([Primitive.circle(0, 0, 5), Primitive.line(0.5, 0, 10, 0)])
        g = build_connections(doc, epsilon=1.0, cap=8, seed=0)
        # line endpoint (0.5, 0) is within eps of the circle's center
        assert g.neighbors[0] == (1,)

    def test_no_self_connections(self):
        doc = star_doc()
        g = build_connections(doc, epsilon=1.0, cap=20, seed=0)
        assert all(i not in ns for i, ns in enumerate(g.neighbors))


class TestBruteForceEquivalence:
    @pytest.mark.parametrize("seed", range(8))
    def test_random_documents(self, seed):
        doc = generate_document(SynthConfig(symbols_min=4, symbols_max=8), seed)
        raw = raw_connections(doc, 1.0)
        expected = oracle_adjacency(doc, 1.0)
        assert [sorted(s) for s in expected] == raw

    def test_epsilon_monotonicity(self):
        doc = generate_document(SynthConfig(), 1)
        small = raw_connections(doc, 0.5)
        large = raw_connections(doc, 2.5)
        for a, b in zip(small, large):
            assert set(a) <= set(b)


class TestCapping:
    def test_star_capped(self):
        g = build_connections(star_doc(12), epsilon=1.0, cap=8, seed=0)
        degrees = [len(ns) for ns in g.neighbors]
        assert all(d <= 8 for d in degrees)

    def test_star_uncapped_degree(self):
        g = build_connections(star_doc(12), epsilon=1.0, cap=20, seed=0)
        assert all(len(ns) == 11 for ns in g.neighbors)

    def test_deterministic_under_seed(self):
        doc = star_doc(12)
        a = build_connections(doc, epsilon=1.0, cap=5, seed=42)
        b = build_connections(doc, epsilon=1.0, cap=5, seed=42)
        assert a.neighbors == b.neighbors

    def test_different_seeds_differ(self):
        doc = star_doc(12)
        a = build_connections(doc, epsilon=1.0, cap=5, seed=1)
        b = build_connections(doc, epsilon=1.0, cap=5, seed=2)
        assert a.neighbors != b.neighbors  # 11 choose 5 leaves plenty of room

    def test_validation(self):
        doc = star_doc(3)
        with pytest.raises(ValueError):
            build_connections(doc, epsilon=0.0)
        with pytest.raises(ValueError):
            build_connections(doc, cap=0)


class TestStats:
    def test_empty_graph(self):
        g = ConnectionGraph(neighbors=((), (), ()), epsilon=1.0, cap=8)
        s = connection_stats(g)
        assert s["degree_histogram"] == {0: 3}
        assert s["components"] == 3
        assert s["edges"] == 0

    def test_single_edge(self):
        g = ConnectionGraph(neighbors=((1,), (0,)), epsilon=1.0, cap=8)
        s = connection_stats(g)
        assert s["degree_histogram"] == {1: 2}
        assert s["components"] == 1

    def test_star_uncapped(self):
        g = build_connections(star_doc(12), epsilon=1.0, cap=20, seed=0)
        s = connection_stats(g)
        assert s["degree_histogram"] == {11: 12}
        assert s["components"] == 1
