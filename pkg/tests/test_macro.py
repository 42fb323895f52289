import numpy as np
import pytest
from hypothesis import given

from narx.macro import build_macro
from narx.motifs import MotifMiner, occurrences_from_spans

from conftest import chain, dags


def _occs(g, spans, s):
    return occurrences_from_spans(g, list(range(g.num_nodes)), spans, s)


def test_crossing_edge_gives_one_directed_edge():
    g = chain([0, 1, 2, 3])
    occs = _occs(g, [(0, 2), (2, 2)], s=0)
    m = build_macro(g, occs, np.ones((2, 3)))
    assert m.edges == ((0, 1),)
    assert m.adjacency().tolist() == [[0, 1], [0, 0]]


def test_overlap_edge_connects_non_adjacent_cores():
    g = chain([0] * 6)
    spans = [(0, 2), (2, 2), (4, 2)]
    # with no expansion only core-crossing edges exist
    assert build_macro(g, _occs(g, spans, 0), np.zeros((3, 2))).edges == ((0, 1), (1, 2))
    # at four hops the last occurrence reaches back over edge 0->1, which the first also holds
    assert build_macro(g, _occs(g, spans, 4), np.zeros((3, 2))).edges == ((0, 1), (0, 2), (1, 2))


def test_shared_overlapped_edges_like_two_blocks():
    # two 3-node blocks joined by 2->3; one-hop expansion makes block two hold 2->3 too
    g = chain([0, 1, 2, 0, 1, 2])
    occs = _occs(g, [(0, 3), (3, 3)], s=1)
    assert occs[1].expanded_nodes == (2, 3, 4, 5)
    m = build_macro(g, occs, np.eye(2))
    assert m.edges == ((0, 1),)
    assert (m.features == np.eye(2)).all()


def test_single_occurrence_whole_graph():
    g = chain([0, 1, 2])
    m = build_macro(g, _occs(g, [(0, 3)], s=2), np.ones((1, 4)))
    assert m.num_nodes == 1 and m.edges == ()


def test_errors():
    g = chain([0, 1, 2])
    occs = _occs(g, [(0, 1), (1, 2)], s=1)
    with pytest.raises(ValueError):
        build_macro(g, occs, np.ones((3, 2)))
    with pytest.raises(ValueError):
        build_macro(g, occs[:1], np.ones((1, 2)))
    with pytest.raises(ValueError):
        build_macro(g, [occs[0], occs[0], occs[1]], np.ones((3, 2)))


@given(dags(max_nodes=12))
def test_macro_invariants(g):
    miner = MotifMiner().fit([g])
    occs = miner.segment(g)
    m = build_macro(g, occs, np.ones((len(occs), 2)))
    owner = {n: i for i, o in enumerate(occs) for n in o.core_nodes}
    contracted = {(owner[a], owner[b]) for a, b in g.edges if owner[a] != owner[b]}
    assert m.num_nodes <= g.num_nodes
    assert all(a != b for a, b in m.edges)
    assert len(set(m.edges)) == len(m.edges)
    assert contracted <= set(m.edges)
    for a, b in g.edges:
        inside = any(a in o.expanded_nodes and b in o.expanded_nodes for o in occs)
        assert inside or (owner[a], owner[b]) in set(m.edges)
    if any(not p.singleton for p in miner.patterns) or len(occs) < g.num_nodes:
        assert m.num_nodes < g.num_nodes
    again = build_macro(g, occs, np.ones((len(occs), 2)))
    assert again.edges == m.edges
