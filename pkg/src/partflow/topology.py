"""Directed capacitated graphs: validation, edge-list I/O and SCC extraction."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

Edge = tuple[int, int]


class TopologyError(ValueError):
    """Raised for malformed topology files or invariant violations."""


@dataclass(frozen=True, eq=False)
class Topology:
    """Immutable directed graph with strictly positive per-edge capacities.

    Nodes are ``0..node_count-1``. ``edges[i]`` is a ``(src, dst)`` pair and
    ``capacities[i]`` its capacity.
    """

    node_count: int
    edges: tuple[Edge, ...]
    capacities: np.ndarray = field(repr=False)

    def __post_init__(self):
        edges = tuple((int(u), int(v)) for u, v in self.edges)
        caps = np.array(self.capacities, dtype=np.float64).reshape(-1)
        if self.node_count < 1:
            raise TopologyError("node_count must be positive")
        if len(edges) != caps.size:
            raise TopologyError(
                f"{len(edges)} edges but {caps.size} capacities")
        seen = set()
        for (u, v), c in zip(edges, caps):
            if not (0 <= u < self.node_count and 0 <= v < self.node_count):
                raise TopologyError(f"edge ({u}, {v}) has an invalid endpoint")
            if u == v:
                raise TopologyError(f"self-loop edge ({u}, {v})")
            if (u, v) in seen:
                raise TopologyError(f"duplicate edge ({u}, {v})")
            if not (np.isfinite(c) and c > 0):
                raise TopologyError(
                    f"edge ({u}, {v}) has non-positive capacity {c}")
            seen.add((u, v))
        caps.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "capacities", caps)

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return (self.node_count == other.node_count
                and self.edges == other.edges
                and np.array_equal(self.capacities, other.capacities))

    def __hash__(self):
        return hash((self.node_count, self.edges, self.capacities.tobytes()))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def c_min(self) -> float:
        return float(self.capacities.min()) if self.num_edges else 0.0

    @property
    def c_max(self) -> float:
        return float(self.capacities.max()) if self.num_edges else 0.0

    def edge_index(self) -> dict[Edge, int]:
        return {e: i for i, e in enumerate(self.edges)}

    def successors(self) -> list[list[int]]:
        """Sorted out-neighbour lists."""
        out: list[list[int]] = [[] for _ in range(self.node_count)]
        for u, v in self.edges:
            out[u].append(v)
        for row in out:
            row.sort()
        return out

    def out_capacity(self) -> np.ndarray:
        out = np.zeros(self.node_count)
        np.add.at(out, [u for u, _ in self.edges], self.capacities)
        return out

    def in_capacity(self) -> np.ndarray:
        inc = np.zeros(self.node_count)
        np.add.at(inc, [v for _, v in self.edges], self.capacities)
        return inc

    def hop_distances(self) -> np.ndarray:
        """All-pairs hop counts; ``inf`` where unreachable."""
        n = self.node_count
        dist = np.full((n, n), np.inf)
        succ = self.successors()
        for s in range(n):
            dist[s, s] = 0
            frontier = [s]
            d = 0
            while frontier:
                d += 1
                nxt = []
                for u in frontier:
                    for v in succ[u]:
                        if dist[s, v] == np.inf:
                            dist[s, v] = d
                            nxt.append(v)
                frontier = nxt
        return dist


def load_topology(path: Union[str, Path], format: str = "edge-list") -> Topology:
    """Read an edge-list file: ``nodes N`` then one ``src dst capacity`` per line.

    Blank lines and ``#`` comments are ignored.
    """
    if format != "edge-list":
        raise TopologyError(f"unsupported topology format {format!r}")
    node_count = None
    edges: list[Edge] = []
    caps: list[float] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if node_count is None:
                if len(parts) != 2 or parts[0] != "nodes":
                    raise TopologyError(
                        f"line {lineno}: expected header 'nodes N', got {line!r}")
                try:
                    node_count = int(parts[1])
                except ValueError:
                    raise TopologyError(
                        f"line {lineno}: bad node count {parts[1]!r}") from None
                continue
            if len(parts) != 3:
                raise TopologyError(
                    f"line {lineno}: expected 'src dst capacity', got {line!r}")
            try:
                u, v, c = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise TopologyError(f"line {lineno}: cannot parse {line!r}") from None
            edges.append((u, v))
            caps.append(c)
    if node_count is None:
        raise TopologyError("missing 'nodes N' header")
    if not edges:
        raise TopologyError("no edges")
    return Topology(node_count, tuple(edges), np.array(caps))


def save_topology(t: Topology, path: Union[str, Path]) -> None:
    with open(path, "w") as fh:
        fh.write(f"nodes {t.node_count}\n")
        for (u, v), c in zip(t.edges, t.capacities):
            fh.write(f"{u} {v} {float(c)!r}\n")


def largest_scc(t: Topology) -> tuple[Topology, dict[int, int]]:
    """Return the largest strongly connected component, relabelled ``0..m-1``.

    Ties between equally large components go to the one holding the smallest
    original node id. The second return value maps original ids to new ids.
    """
    n = t.node_count
    if t.num_edges:
        rows, cols = zip(*t.edges)
    else:
        rows, cols = (), ()
    adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(adj, directed=True, connection="strong")
    best = None
    for lab in np.unique(labels):
        members = np.flatnonzero(labels == lab)
        key = (-members.size, int(members.min()))
        if best is None or key < best[0]:
            best = (key, members)
    keep = sorted(int(v) for v in best[1])
    remap = {old: new for new, old in enumerate(keep)}
    edges, caps = [], []
    for (u, v), c in zip(t.edges, t.capacities):
        if u in remap and v in remap:
            edges.append((remap[u], remap[v]))
            caps.append(c)
    return Topology(len(keep), tuple(edges), np.array(caps)), remap


def _resolve_edges(t: Topology, failed: Iterable[Union[int, Sequence[int]]]) -> set[int]:
    index = t.edge_index()
    ids = set()
    for item in failed:
        if isinstance(item, (tuple, list)):
            key = (int(item[0]), int(item[1]))
            if key not in index:
                raise TopologyError(f"unknown edge {key}")
            ids.add(index[key])
        else:
            e = int(item)
            if not 0 <= e < t.num_edges:
                raise TopologyError(f"unknown edge id {e}")
            ids.add(e)
    return ids


def zero_capacities(t: Topology, failed) -> Topology:
    """Drop failed links, given as edge ids or ``(src, dst)`` tuples.

    Removal keeps every capacity strictly positive; the surviving edges keep
    their relative order and the node set is unchanged.
    """
    drop = _resolve_edges(t, failed)
    keep = [i for i in range(t.num_edges) if i not in drop]
    return Topology(t.node_count,
                    tuple(t.edges[i] for i in keep),
                    t.capacities[keep])


def case_study_topology() -> Topology:
    """Four nodes, five unit links; node labels 1..4 become ids 0..3."""
    edges = ((0, 3), (0, 2), (2, 3), (1, 3), (1, 2))
    return Topology(4, edges, np.ones(len(edges)))


def random_topology(n: int, extra_edges: int = 0, capacities=(1.0,),
                    seed=None) -> Topology:
    """Random strongly connected digraph: a random Hamiltonian cycle plus
    ``extra_edges`` random chords, capacities drawn from ``capacities``."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    edges = {(int(order[i]), int(order[(i + 1) % n])) for i in range(n)} if n > 1 else set()
    candidates = [(u, v) for u in range(n) for v in range(n)
                  if u != v and (u, v) not in edges]
    if extra_edges and candidates:
        pick = rng.choice(len(candidates), size=min(extra_edges, len(candidates)),
                          replace=False)
        edges.update(candidates[i] for i in pick)
    edges = sorted(edges)
    caps = rng.choice(np.asarray(capacities, dtype=float), size=len(edges))
    return Topology(n, tuple(edges), caps)
