import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from partflow.topology import (Topology, TopologyError, case_study_topology, largest_scc,
                               load_topology, random_topology, save_topology,
                               zero_capacities)

from conftest import reachable


def test_edge_list_roundtrip(tmp_path):
    t = random_topology(7, extra_edges=6, capacities=(1.0, 2.5, 10.0 / 3.0), seed=3)
    path = tmp_path / "g.txt"
    save_topology(t, path)
    assert load_topology(path) == t


def test_parser_skips_comments_and_blank_lines(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("# toy\nnodes 3\n\n0 1 2.0  # fast link\n1 2 1\n2 0 1\n")
    t = load_topology(path)
    assert t.node_count == 3
    assert t.edges == ((0, 1), (1, 2), (2, 0))
    assert list(t.capacities) == [2.0, 1.0, 1.0]


@pytest.mark.parametrize("body, fragment", [
    ("0 1 1\n", "line 1"),
    ("nodes 3\n0 1\n", "line 2"),
    ("nodes 3\n0 1 x\n", "line 2"),
    ("nodes 3\n", "no edges"),
    ("nodes 3\n0 0 1\n", "self-loop"),
    ("nodes 3\n0 1 1\n0 1 2\n", "duplicate"),
    ("nodes 3\n0 5 1\n", "invalid endpoint"),
    ("nodes 3\n0 1 0\n", "non-positive"),
    ("nodes 3\n0 1 -2\n", "non-positive"),
])
def test_parser_errors(tmp_path, body, fragment):
    path = tmp_path / "bad.txt"
    path.write_text(body)
    with pytest.raises(TopologyError, match=fragment):
        load_topology(path)


def test_capacities_are_read_only():
    t = case_study_topology()
    with pytest.raises(ValueError):
        t.capacities[0] = 5.0


def test_case_study_shape():
    t = case_study_topology()
    assert t.node_count == 4 and t.num_edges == 5
    assert np.all(t.capacities == 1.0)


def test_hop_distances_match_closure():
    t = random_topology(8, extra_edges=4, seed=11)
    dist = t.hop_distances()
    r = reachable(t)
    assert np.array_equal(np.isfinite(dist), r)
    # every finite distance is realised by an edge from a node one hop closer
    for s in range(t.node_count):
        for v in range(t.node_count):
            if v != s and np.isfinite(dist[s, v]):
                assert any(dist[s, u] == dist[s, v] - 1 for u, w in t.edges if w == v)


def _brute_scc(t):
    r = reachable(t)
    mutual = r & r.T
    comps = {tuple(np.flatnonzero(mutual[v])) for v in range(t.node_count)}
    return max(comps, key=lambda c: (len(c), -min(c)))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 9), density=st.floats(0.05, 0.5), seed=st.integers(0, 10_000))
def test_largest_scc_matches_brute_force(n, density, seed):
    rng = np.random.default_rng(seed)
    edges = [(u, v) for u in range(n) for v in range(n) if u != v and rng.random() < density]
    if not edges:
        edges = [(0, 1)]
    t = Topology(n, tuple(edges), np.ones(len(edges)))
    sub, remap = largest_scc(t)
    expected = _brute_scc(t)
    assert sorted(remap) == list(expected)
    assert sub.node_count == len(expected)
    kept = [(remap[u], remap[v]) for u, v in t.edges if u in remap and v in remap]
    assert list(sub.edges) == kept


def test_largest_scc_tie_prefers_smallest_id():
    # two 2-cycles {0,1} and {2,3}, joined one way
    t = Topology(4, ((2, 3), (3, 2), (0, 1), (1, 0), (1, 2)), np.ones(5))
    sub, remap = largest_scc(t)
    assert remap == {0: 0, 1: 1}
    assert set(sub.edges) == {(0, 1), (1, 0)}


def test_zero_capacities_by_id_and_tuple_agree():
    t = case_study_topology()
    a = zero_capacities(t, [1])
    b = zero_capacities(t, [(0, 2)])
    assert a == b
    assert a.num_edges == 4 and (0, 2) not in a.edges
    assert a.node_count == t.node_count


def test_zero_capacities_composes():
    t = random_topology(6, extra_edges=5, seed=2)
    e1, e2 = t.edges[0], t.edges[3]
    once = zero_capacities(t, [e1, e2])
    twice = zero_capacities(zero_capacities(t, [e1]), [e2])
    assert once == twice


def test_zero_capacities_rejects_unknown_edges():
    t = case_study_topology()
    with pytest.raises(TopologyError):
        zero_capacities(t, [9])
    with pytest.raises(TopologyError):
        zero_capacities(t, [(3, 0)])


@pytest.mark.parametrize("seed", range(5))
def test_random_topology_strongly_connected(seed):
    t = random_topology(9, extra_edges=seed * 3, seed=seed)
    assert reachable(t).all()
