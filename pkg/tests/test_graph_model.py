import json
import math
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qgheat import graph_model as gm

DOCS = Path(__file__).resolve().parents[1] / "docs"


def test_single_edge_file():
    g = gm.parse_graph('{"vertices": ["vD", "w"], "edges": [["vD", "w", 1]], "dirichlet": ["vD"]}')
    assert len(g.vertices) == 2 and g.n_edges == 1
    assert g.dirichlet_vertex == "vD"


def test_pitchfork_file_from_docs():
    g = gm.load_graph(DOCS / "pitchfork.json")
    assert len(g.vertices) == 4 and g.n_edges == 3
    assert g.degree("w") == 3
    assert g == gm.pitchfork()


def test_zero_length_rejected():
    text = '{"vertices": ["vD", "w"], "edges": [["vD", "w", 0]], "dirichlet": ["vD"]}'
    with pytest.raises(gm.GraphValidationError) as info:
        gm.parse_graph(text)
    assert info.value.rule == "non-positive length"


@pytest.mark.parametrize("text, rule", [
    ('{"vertices": ["vD", "w"], "edges": [["vD", "x", 1]], "dirichlet": ["vD"]}', "unknown endpoint"),
    ('{"vertices": ["vD", "w"], "edges": [["vD", "w", 1]], "dirichlet": []}', "empty Dirichlet set"),
    ('{"vertices": ["vD", "w"], "edges": [["vD", "vD", 1], ["vD", "w", 1]], "dirichlet": ["vD"]}',
     "self-loop at Dirichlet vertex"),
    ('{"vertices": ["vD", "w", "z"], "edges": [["vD", "w", 1]], "dirichlet": ["vD"]}', "isolated vertex"),
    ('{"vertices": ["vD", "a", "b"], "edges": [["vD", "a", 1], ["vD", "b", 1]], "dirichlet": ["vD"]}',
     "disconnected after removing Dirichlet vertices"),
])
def test_validation_rules(text, rule):
    with pytest.raises(gm.GraphValidationError) as info:
        gm.parse_graph(text)
    assert info.value.rule == rule


@pytest.mark.parametrize("text", ["{not json", '{"vertices": ["a"]}', '[1, 2]',
                                  '{"vertices": ["vD", "w"], "edges": [["vD", "w"]], "dirichlet": ["vD"]}',
                                  '{"vertices": ["vD", "w"], "edges": [["vD", "w", 1]], "dirichlet": ["vD"], "x": 1}'])
def test_format_errors(text):
    with pytest.raises(gm.GraphFormatError):
        gm.parse_graph(text)


def test_merge_dirichlet_identity():
    g = gm.pitchfork()
    assert gm.merge_dirichlet(g) is g


def test_merge_two_dirichlet_leaves():
    g = gm.MetricGraph(["d1", "d2", "w", "a"], [("d1", "w", 1), ("d2", "w", 1), ("w", "a", 1)], {"d1", "d2"})
    m = gm.merge_dirichlet(g)
    assert m.dirichlet_vertex == "d1" and m.degree("d1") == 2
    assert m.total_length == g.total_length
    assert sorted(m.lengths) == sorted(g.lengths)


def test_merge_creates_parallel_edges():
    g = gm.MetricGraph(["d1", "w", "d2"], [("d1", "w", 1), ("w", "d2", 1)], {"d1", "d2"})
    m = gm.merge_dirichlet(g)
    assert m.neighbors("w") == ["d1", "d1"]
    assert m.degree("d1") == 2


def test_equilateralize_identity():
    e = gm.equilateralize(gm.star(4))
    assert e.ell == 1.0 and e.dummy_vertices == ()
    assert e.base == gm.star(4)


def test_equilateralize_half():
    g = gm.MetricGraph(["vD", "w", "a"], [("vD", "w", 1.0), ("w", "a", 0.5)], {"vD"})
    e = gm.equilateralize(g)
    assert e.ell == 0.5
    assert len(e.dummy_vertices) == 1
    assert e.subdivision_map[0] == (0, 1) and e.subdivision_map[1] == (2,)
    assert e.reconstruct_lengths() == [1.0, 0.5]


def test_equilateralize_irrational():
    g = gm.MetricGraph(["vD", "w", "a"], [("vD", "w", 1.0), ("w", "a", math.sqrt(2))], {"vD"})
    with pytest.raises(gm.RationalityError):
        gm.equilateralize(g, tolerance=1e-14)
    # a loose tolerance snaps sqrt(2) to a continued-fraction convergent
    assert gm.equilateralize(g, tolerance=0.02, max_denominator=5).n_edges == 5 + 7
    # the default snap accepts sqrt(2) but the subdivision is far too fine
    with pytest.raises(gm.RationalityError, match="would need"):
        gm.equilateralize(g)


def test_path_graph_examples():
    g = gm.path_graph(1, 1)
    assert g.n_edges == 1 and g.dirichlet_vertex == "vD" and g.degree("vD") == 1
    g = gm.path_graph(1, 4)
    assert g.lengths == (0.25,) * 4
    g = gm.path_graph(3, 3)
    assert gm.equilateralize(g).ell == 1.0 and g.n_edges == gm.pitchfork().n_edges
    assert g.is_path() and not gm.pitchfork().is_path()


def test_reference_suite(suite):
    assert len(suite) == 12
    for g in suite.values():
        assert len(g.dirichlet) == 1
        assert set(g.lengths) == {1.0}


def test_json_round_trip(suite):
    for g in suite.values():
        h = gm.parse_graph(g.to_json())
        assert h == g and h.name == g.name and h.split_interior == g.split_interior
        assert h.to_json() == g.to_json()


def test_dirichlet_vertex_requires_singleton():
    g = gm.interval(both_dirichlet=True)
    with pytest.raises(gm.GraphError):
        g.dirichlet_vertex
    # merging the two ends would create a loop at the Dirichlet vertex
    with pytest.raises(gm.GraphValidationError):
        gm.merge_dirichlet(g)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 12), st.integers(1, 6)), min_size=1, max_size=5),
       st.sampled_from([1.0, 0.3, 2.5]))
def test_equilateralize_reproduces_lengths(parts, scale):
    # path with rational edge lengths p/q * scale
    lengths = [scale * p / q for p, q in parts]
    names = ["vD"] + [f"v{i}" for i in range(1, len(lengths) + 1)]
    g = gm.MetricGraph(names, [(names[i], names[i + 1], x) for i, x in enumerate(lengths)], {"vD"})
    e = gm.equilateralize(g)
    assert e.reconstruct_lengths() == pytest.approx(lengths, rel=1e-9)
    assert all(e.base.degree(d) == 2 for d in e.dummy_vertices)
    assert all(d.startswith(gm.DUMMY_PREFIX) for d in e.dummy_vertices)
    assert e.total_length == pytest.approx(g.total_length, rel=1e-12)
    # chain counts are the ratios to the common unit
    unit = Fraction(1)
    for (p, q), chain in zip(parts, (e.subdivision_map[i] for i in range(len(parts)))):
        assert len(chain) * e.ell == pytest.approx(scale * p / q, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 5.0), min_size=2, max_size=5))
def test_merge_preserves_length_multiset(lengths):
    # star whose leaves are all Dirichlet except the last
    leaves = [f"d{i}" for i in range(len(lengths) - 1)] + ["free"]
    g = gm.MetricGraph(["c"] + leaves, [("c", v, x) for v, x in zip(leaves, lengths)], set(leaves[:-1]))
    m = gm.merge_dirichlet(g)
    assert m.total_length == pytest.approx(g.total_length)
    assert sorted(m.lengths) == sorted(g.lengths)
    assert m.degree(m.dirichlet_vertex) == len(lengths) - 1


def test_named_graph():
    assert gm.named_graph("path7").n_edges == 7
    with pytest.raises(KeyError):
        gm.named_graph("nonsense")


def test_docs_example_is_valid_json():
    obj = json.loads((DOCS / "pitchfork.json").read_text())
    assert set(obj) >= {"vertices", "edges", "dirichlet"}
