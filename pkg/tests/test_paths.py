import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from partflow.paths import (PathError, build_catalog, load_catalog, restrict_to_source,
                            save_catalog, yen_ksp)
from partflow.topology import Topology, case_study_topology, random_topology

from conftest import all_simple_paths


def test_case_study_paths():
    t = case_study_topology()
    assert yen_ksp(t, 0, 3, 4) == [(0, 3), (0, 2, 3)]
    assert yen_ksp(t, 1, 3, 4) == [(1, 3), (1, 2, 3)]
    assert yen_ksp(t, 3, 0, 4) == []


def test_diamond_tie_break_is_lexicographic():
    t = Topology(4, ((0, 2), (0, 1), (1, 3), (2, 3)), np.ones(4))
    assert yen_ksp(t, 0, 3, 2) == [(0, 1, 3), (0, 2, 3)]


@settings(max_examples=60, deadline=None)
@given(n=st.integers(3, 7), extra=st.integers(0, 12), k=st.integers(1, 6),
       seed=st.integers(0, 5000))
def test_yen_matches_exhaustive_enumeration(n, extra, k, seed):
    t = random_topology(n, extra_edges=extra, seed=seed)
    rng = np.random.default_rng(seed)
    s, d = rng.choice(n, size=2, replace=False)
    expected = all_simple_paths(t, int(s), int(d))[:k]
    assert yen_ksp(t, int(s), int(d), k) == expected


def test_yen_rejects_bad_arguments():
    t = case_study_topology()
    with pytest.raises(PathError):
        yen_ksp(t, 1, 1, 3)
    with pytest.raises(PathError):
        yen_ksp(t, 0, 7, 3)
    with pytest.raises(PathError):
        yen_ksp(t, 0, 3, 0)


def test_catalog_pads_and_skips_unreachable():
    t = case_study_topology()
    cat = build_catalog(t, k=4)
    # only 0->2, 0->3, 1->2, 1->3, 2->3 are reachable
    assert cat.pairs == ((0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
    i = cat.pair_index()[(0, 3)]
    assert cat.paths[i * 4:i * 4 + 4] == ((0, 3), (0, 2, 3), (0, 2, 3), (0, 2, 3))
    assert cat.first_copy()[i * 4:i * 4 + 4].tolist() == [True, True, False, False]


def test_incidence_matrices():
    t = random_topology(6, extra_edges=5, seed=4)
    cat = build_catalog(t, k=3)
    idx = t.edge_index()
    for p, path in enumerate(cat.paths):
        want = np.zeros(t.num_edges)
        for e in zip(path[:-1], path[1:]):
            want[idx[e]] = 1
        assert np.array_equal(cat.path_edge[p], want)
    assert cat.pair_path.shape == (cat.num_pairs, cat.num_paths)
    assert np.array_equal(cat.pair_path.sum(axis=0), np.ones(cat.num_paths))
    assert np.array_equal(cat.pair_path.sum(axis=1), np.full(cat.num_pairs, 3))
    assert np.array_equal(np.argmax(cat.pair_path, axis=0), cat.path_pair)


def test_catalog_roundtrip(tmp_path):
    t = random_topology(6, extra_edges=6, seed=9)
    cat = build_catalog(t, k=3)
    save_catalog(cat, tmp_path / "c.txt")
    back = load_catalog(tmp_path / "c.txt", t)
    assert back.pairs == cat.pairs and back.paths == cat.paths and back.k == 3
    assert np.array_equal(back.path_edge, cat.path_edge)


def test_catalog_loader_checks_endpoints(tmp_path):
    t = case_study_topology()
    (tmp_path / "c.txt").write_text("k 1\n0 3 : 0-2\n")
    with pytest.raises(PathError, match="does not join"):
        load_catalog(tmp_path / "c.txt", t)


def test_with_failures_marks_dead_paths():
    t = case_study_topology()
    cat = build_catalog(t, k=2)
    e = t.edge_index()[(2, 3)]
    view = cat.with_failures(t, [e])
    assert view.path_edge.shape == (cat.num_paths, t.num_edges - 1)
    for p, path in enumerate(cat.paths):
        uses = (2, 3) in set(zip(path[:-1], path[1:]))
        assert view.alive[p] == (not uses)


def test_restrict_to_source_partitions_pairs():
    t = random_topology(7, extra_edges=8, seed=1)
    cat = build_catalog(t, k=2)
    seen = []
    for s in range(t.node_count):
        sl = restrict_to_source(cat, s)
        assert all(cat.pairs[i][0] == s for i in sl.pair_ids)
        seen.extend(sl.pair_ids.tolist())
    assert sorted(seen) == list(range(cat.num_pairs))


def test_restrict_to_source_filters_by_demand():
    t = case_study_topology()
    cat = build_catalog(t, k=2)
    d = np.zeros((4, 4))
    d[0, 3] = 1.0
    sl = restrict_to_source(cat, 0, demand=d)
    assert [cat.pairs[i] for i in sl.pair_ids] == [(0, 3)]
    assert set(sl.edge_ids) == {t.edge_index()[e] for e in [(0, 3), (0, 2), (2, 3)]}
