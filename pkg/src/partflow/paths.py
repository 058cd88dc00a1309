"""Candidate paths per source-destination pair and their incidence matrices."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .topology import Topology

PathT = tuple[int, ...]


class PathError(ValueError):
    pass


def _path_key(path: PathT):
    return (len(path), path)


def _shortest_path(succ, src: int, dst: int, banned_nodes: set,
                   banned_edges: set) -> Optional[PathT]:
    """Fewest-hop path, lexicographically smallest among ties."""
    if src in banned_nodes or dst in banned_nodes:
        return None
    # BFS backwards from dst gives hop distances; a greedy forward walk
    # choosing the smallest admissible successor is then lexicographically minimal.
    pred: dict[int, list[int]] = {}
    for u, vs in enumerate(succ):
        if u in banned_nodes:
            continue
        for v in vs:
            if v in banned_nodes or (u, v) in banned_edges:
                continue
            pred.setdefault(v, []).append(u)
    dist = {dst: 0}
    frontier = [dst]
    while frontier and src not in dist:
        nxt = []
        for v in frontier:
            for u in pred.get(v, ()):
                if u not in dist:
                    dist[u] = dist[v] + 1
                    nxt.append(u)
        frontier = nxt
    if src not in dist:
        return None
    path = [src]
    u = src
    while u != dst:
        for v in succ[u]:
            if (u, v) in banned_edges or v in banned_nodes:
                continue
            if dist.get(v) == dist[u] - 1:
                u = v
                break
        path.append(u)
    return tuple(path)


def yen_ksp(t: Topology, s: int, d: int, k: int) -> list[PathT]:
    """Up to ``k`` loop-free paths from ``s`` to ``d`` ordered by
    (hop count, node sequence). Empty list when ``d`` is unreachable."""
    if s == d:
        raise PathError("source equals destination")
    if not (0 <= s < t.node_count and 0 <= d < t.node_count):
        raise PathError(f"invalid node id in pair ({s}, {d})")
    if k < 1:
        raise PathError("k must be positive")
    succ = t.successors()
    first = _shortest_path(succ, s, d, set(), set())
    if first is None:
        return []
    found = [first]
    heap: list = []
    queued = {first}
    while len(found) < k:
        last = found[-1]
        for i in range(len(last) - 1):
            spur = last[i]
            root = last[:i + 1]
            banned_edges = {(p[i], p[i + 1]) for p in found
                            if len(p) > i + 1 and p[:i + 1] == root}
            banned_nodes = set(root[:-1])
            tail = _shortest_path(succ, spur, d, banned_nodes, banned_edges)
            if tail is None:
                continue
            cand = root[:-1] + tail
            if cand not in queued:
                queued.add(cand)
                heapq.heappush(heap, (_path_key(cand), cand))
        if not heap:
            break
        found.append(heapq.heappop(heap)[1])
    return found


@dataclass(frozen=True, eq=False)
class PathCatalog:
    """Exactly ``k`` candidate paths per reachable ordered pair.

    Paths are stored flat: pair ``i`` owns paths ``i*k .. i*k+k-1``. Pairs with
    fewer than ``k`` simple paths repeat their last path. ``alive`` marks paths
    that avoid failed links (all true for a fresh catalog).
    """

    node_count: int
    k: int
    pairs: tuple[tuple[int, int], ...]
    paths: tuple[PathT, ...]
    path_edge: np.ndarray = field(repr=False)
    pair_path: np.ndarray = field(repr=False)
    alive: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.alive is None:
            object.__setattr__(self, "alive", np.ones(len(self.paths), dtype=bool))
        for arr in (self.path_edge, self.pair_path, self.alive):
            arr.setflags(write=False)

    @property
    def num_pairs(self) -> int:
        return len(self.pairs)

    @property
    def num_paths(self) -> int:
        return len(self.paths)

    @property
    def path_pair(self) -> np.ndarray:
        """Owning pair index of every path."""
        return np.repeat(np.arange(self.num_pairs), self.k)

    def pair_index(self) -> dict[tuple[int, int], int]:
        return {p: i for i, p in enumerate(self.pairs)}

    def first_copy(self) -> np.ndarray:
        """True for the first occurrence of each distinct path within a pair."""
        mask = np.zeros(self.num_paths, dtype=bool)
        for i in range(self.num_pairs):
            seen = set()
            for j in range(i * self.k, (i + 1) * self.k):
                if self.paths[j] not in seen:
                    seen.add(self.paths[j])
                    mask[j] = True
        return mask

    def pair_demand(self, d) -> np.ndarray:
        """Per-pair demand vector from an ``n x n`` matrix (or pass-through)."""
        d = np.asarray(d, dtype=np.float64)
        if d.ndim == 2:
            src = np.fromiter((s for s, _ in self.pairs), dtype=int, count=self.num_pairs)
            dst = np.fromiter((t for _, t in self.pairs), dtype=int, count=self.num_pairs)
            return d[src, dst]
        if d.shape != (self.num_pairs,):
            raise PathError(f"demand vector has shape {d.shape}, "
                            f"expected ({self.num_pairs},)")
        return d

    def uniform_weights(self) -> np.ndarray:
        return np.full(self.num_paths, 1.0 / self.k)

    def first_path_weights(self) -> np.ndarray:
        w = np.zeros(self.num_paths)
        w[::self.k] = 1.0
        return w

    def with_failures(self, t: Topology, failed_ids) -> "PathCatalog":
        """View of this catalog on ``t`` minus ``failed_ids`` (original edge ids).

        Columns of failed edges are removed so the view lines up with
        ``zero_capacities(t, failed_ids)``; paths through them are marked dead.
        """
        failed = sorted(set(int(e) for e in failed_ids))
        keep = np.setdiff1d(np.arange(t.num_edges), failed)
        dead = self.path_edge[:, failed].any(axis=1) if failed else np.zeros(self.num_paths, bool)
        return PathCatalog(self.node_count, self.k, self.pairs, self.paths,
                           np.array(self.path_edge[:, keep]), np.array(self.pair_path),
                           np.array(self.alive & ~dead))


def _incidence(t: Topology, k: int, pairs, paths):
    index = t.edge_index()
    path_edge = np.zeros((len(paths), t.num_edges))
    for p, path in enumerate(paths):
        for u, v in zip(path[:-1], path[1:]):
            try:
                path_edge[p, index[(u, v)]] = 1.0
            except KeyError:
                raise PathError(f"path {path} uses missing edge ({u}, {v})") from None
    pair_path = np.kron(np.eye(len(pairs)), np.ones((1, k)))
    return path_edge, pair_path


def build_catalog(t: Topology, k: int = 4) -> PathCatalog:
    """Yen's k shortest (hop-count) paths for every reachable ordered pair.

    Unreachable pairs are left out of the catalog.
    """
    pairs, paths = [], []
    for s in range(t.node_count):
        for d in range(t.node_count):
            if s == d:
                continue
            found = yen_ksp(t, s, d, k)
            if not found:
                continue
            found = found + [found[-1]] * (k - len(found))
            pairs.append((s, d))
            paths.extend(found)
    path_edge, pair_path = _incidence(t, k, pairs, paths)
    return PathCatalog(t.node_count, k, tuple(pairs), tuple(paths), path_edge, pair_path)


@dataclass(frozen=True)
class CatalogSlice:
    """The commodities leaving one source and the links they may use."""

    source: int
    pair_ids: np.ndarray
    path_ids: np.ndarray
    edge_ids: np.ndarray

    def __len__(self):
        return len(self.pair_ids)


def restrict_to_source(cat: PathCatalog, s: int, demand=None) -> CatalogSlice:
    """Pairs ``(s, t)`` of the catalog, optionally only those with positive
    demand in ``demand`` (an ``n x n`` matrix or stack of matrices)."""
    if not 0 <= s < cat.node_count:
        raise PathError(f"invalid source {s}")
    ids = [i for i, (src, _) in enumerate(cat.pairs) if src == s]
    if demand is not None:
        d = np.asarray(demand, dtype=float)
        if d.ndim == 3:
            d = d.max(axis=0)
        ids = [i for i in ids if d[cat.pairs[i]] > 0]
    pair_ids = np.asarray(ids, dtype=int)
    path_ids = (pair_ids[:, None] * cat.k + np.arange(cat.k)).reshape(-1)
    if path_ids.size:
        edge_ids = np.flatnonzero(cat.path_edge[path_ids].any(axis=0))
    else:
        edge_ids = np.zeros(0, dtype=int)
    return CatalogSlice(s, pair_ids, path_ids, edge_ids)


def save_catalog(cat: PathCatalog, path: Union[str, Path]) -> None:
    """One line per pair: ``s t : n0-n1-... | n0-...``."""
    with open(path, "w") as fh:
        fh.write(f"k {cat.k}\n")
        for i, (s, d) in enumerate(cat.pairs):
            chunk = cat.paths[i * cat.k:(i + 1) * cat.k]
            fh.write(f"{s} {d} : " + " | ".join("-".join(map(str, p)) for p in chunk) + "\n")


def load_catalog(path: Union[str, Path], t: Topology) -> PathCatalog:
    k = None
    pairs, paths = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if k is None:
                head = line.split()
                if len(head) != 2 or head[0] != "k":
                    raise PathError(f"line {lineno}: expected header 'k K'")
                k = int(head[1])
                continue
            left, _, right = line.partition(":")
            s, d = (int(x) for x in left.split())
            chunk = [tuple(int(x) for x in p.strip().split("-")) for p in right.split("|")]
            if len(chunk) != k:
                raise PathError(f"line {lineno}: expected {k} paths, got {len(chunk)}")
            for p in chunk:
                if p[0] != s or p[-1] != d:
                    raise PathError(f"line {lineno}: path {p} does not join {s}->{d}")
            pairs.append((s, d))
            paths.extend(chunk)
    if k is None:
        raise PathError("empty catalog file")
    path_edge, pair_path = _incidence(t, k, pairs, paths)
    return PathCatalog(t.node_count, k, tuple(pairs), tuple(paths), path_edge, pair_path)

