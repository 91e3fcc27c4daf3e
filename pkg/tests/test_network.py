import pytest
from hypothesis import given, settings, strategies as st

from lsoc.errors import DisconnectedGraph, InvalidEdge
from lsoc.network import (
    build_graph,
    complete_binary_tree,
    complete_graph,
    factorial_subsystem,
    line_graph,
    ring_graph,
)


def test_smallest_graph():
    g = build_graph(2, [(0, 1)])
    assert g.edges == frozenset({(0, 1)})


def test_triangle():
    g = build_graph(3, [(0, 1), (1, 2), (0, 2)])
    assert len(g.edges) == 3
    assert all(g.degree(i) == 2 for i in range(3))


def test_disconnected_rejected():
    with pytest.raises(DisconnectedGraph):
        build_graph(3, [(0, 1)])


@pytest.mark.parametrize("edges", [[(0, 0), (0, 1)], [(0, 3), (0, 1), (1, 2)], [(-1, 0)]])
def test_invalid_edges(edges):
    with pytest.raises(InvalidEdge):
        build_graph(3, edges)


def test_edges_normalised_and_deduplicated():
    g = build_graph(2, [(1, 0), (0, 1)])
    assert g.edges == frozenset({(0, 1)})


def test_subsystem_members():
    tri = build_graph(3, [(0, 1), (1, 2), (0, 2)])
    assert factorial_subsystem(tri, 0).members == (0, 1, 2)
    line = line_graph(3)
    assert factorial_subsystem(line, 0).members == (0, 1)
    # center first, neighbours ascending
    assert factorial_subsystem(line, 1).members == (1, 0, 2)


def test_topology_builders():
    assert ring_graph(5).degree(0) == 2
    assert complete_graph(4).degree(2) == 3
    t = complete_binary_tree(7)
    assert [t.degree(i) for i in range(7)] == [2, 3, 3, 1, 1, 1, 1]


@st.composite
def connected_graphs(draw):
    n = draw(st.integers(1, 9))
    # random spanning tree plus extra edges
    edges = [(draw(st.integers(0, i - 1)), i) for i in range(1, n)]
    if n > 1:
        extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=10))
        edges += [e for e in extra if e[0] != e[1]]
    return n, edges


@settings(max_examples=60, deadline=None)
@given(connected_graphs())
def test_membership_is_symmetric_and_covers(data):
    n, edges = data
    g = build_graph(n, edges)
    subs = [factorial_subsystem(g, i) for i in range(n)]
    for i in range(n):
        s = subs[i]
        assert s.members[0] == i
        assert list(s.members[1:]) == sorted(s.members[1:])
        assert s.size == g.degree(i) + 1
        for j in range(n):
            if i != j:
                assert (j in s.members) == (i in subs[j].members)
    assert set().union(*(s.members for s in subs)) == set(range(n))
