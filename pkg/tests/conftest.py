import itertools

import numpy as np
import pytest

from partflow.demand import case_study_scenarios
from partflow.paths import build_catalog
from partflow.topology import Topology, case_study_topology, random_topology


def all_simple_paths(t: Topology, s: int, d: int):
    """Every simple s->d path by exhaustive DFS (test oracle)."""
    succ = {u: [] for u in range(t.node_count)}
    for u, v in t.edges:
        succ[u].append(v)
    out = []

    def walk(path):
        u = path[-1]
        if u == d:
            out.append(tuple(path))
            return
        for v in succ[u]:
            if v not in path:
                walk(path + [v])

    walk([s])
    return sorted(out, key=lambda p: (len(p), p))


def reachable(t: Topology):
    """Transitive closure by Floyd-Warshall on booleans (test oracle)."""
    n = t.node_count
    r = np.eye(n, dtype=bool)
    for u, v in t.edges:
        r[u, v] = True
    for m in range(n):
        r |= r[:, [m]] & r[[m], :]
    return r


def small_instances(count, seed=0, n_range=(6, 10), k=4):
    """Random strongly connected instances with gravity-like demand."""
    from partflow.demand import gen_gravity
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        t = random_topology(n, extra_edges=int(rng.integers(n // 2, 2 * n)),
                            capacities=(1.0, 2.0, 5.0), seed=int(rng.integers(1 << 31)))
        cat = build_catalog(t, k=k)
        d = gen_gravity(t, scale=float(rng.uniform(1, 5)), seed=int(rng.integers(1 << 31)))
        out.append((t, cat, d))
    return out


@pytest.fixture
def case_study():
    t = case_study_topology()
    return t, build_catalog(t, k=4), case_study_scenarios()


@pytest.fixture
def case_study_k2():
    t = case_study_topology()
    return t, build_catalog(t, k=2), case_study_scenarios()


def pairs_of(n):
    return [(s, d) for s, d in itertools.permutations(range(n), 2)]
