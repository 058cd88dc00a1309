"""LP baselines over the path formulation, a brute-force grid oracle,
the LP-top heuristic and POP random decomposition."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .lp import OPTIMAL, LpProblem, solve_lp
from .objectives import (MAXIMIZE, Allocation, ObjectiveError, eval_mlu,
                         eval_mtf_mcf, flows_to_weights)
from .paths import PathCatalog
from .topology import Topology

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


def _active_paths(cat: PathCatalog, dem: np.ndarray) -> np.ndarray:
    """Alive paths of pairs with positive demand."""
    return np.flatnonzero(np.repeat(dem > 0, cat.k) & cat.alive)


def _solve(p: LpProblem, tol: float):
    res = solve_lp(p, tol=tol)
    if res.status != OPTIMAL:
        raise SolverError(f"LP ended with status {res.status}")
    return res


def _check_routable(cat: PathCatalog, dem: np.ndarray):
    alive_any = cat.alive.reshape(cat.num_pairs, cat.k).any(axis=1)
    bad = np.flatnonzero((dem > 0) & ~alive_any)
    if bad.size:
        raise SolverError(f"pair {cat.pairs[bad[0]]} has demand but no usable path")


def build_mlu_flow_lp(t: Topology, cat: PathCatalog, d, background=None):
    """Min alpha s.t. path flows meet each demand and every edge load
    (plus optional fixed background load) stays within alpha * capacity."""
    dem = cat.pair_demand(d)
    _check_routable(cat, dem)
    paths = _active_paths(cat, dem)
    p = LpProblem("min")
    for q in paths:
        s, dd = cat.pairs[q // cat.k]
        p.add_var(f"f_{s}_{dd}_{q % cat.k}")
    mlu = p.add_var("mlu")
    bg = np.zeros(t.num_edges) if background is None else np.asarray(background, float)
    for e in range(t.num_edges):
        on = np.flatnonzero(cat.path_edge[paths, e])
        if on.size == 0 and bg[e] == 0:
            continue
        idx = np.append(on, mlu)
        val = np.append(np.ones(on.size), -t.capacities[e])
        p.add_constraint((idx, val), "<=", -bg[e])
    pair_of = paths // cat.k
    for i in np.flatnonzero(dem > 0):
        idx = np.flatnonzero(pair_of == i)
        p.add_constraint((idx, np.ones(idx.size)), "=", dem[i])
    p.set_objective({mlu: 1.0})
    return p, paths


def lp_mlu_flows(t: Topology, cat: PathCatalog, d, tol: float = 1e-7):
    """LP-f: optimal path flows for minimum MLU. Returns ``(Allocation, mlu)``."""
    dem = cat.pair_demand(d)
    x = np.zeros(cat.num_paths)
    if not np.any(dem > 0):
        return Allocation("flows", x), 0.0
    p, paths = build_mlu_flow_lp(t, cat, dem)
    res = _solve(p, tol)
    x[paths] = res.x[:-1]
    load = x @ cat.path_edge
    return Allocation("flows", x), float(np.max(load / t.capacities))


def lp_weights_mlu(t: Topology, cat: PathCatalog, d, tol: float = 1e-7):
    """LP-w: split weights as decision variables. Returns ``(Allocation, mlu)``.

    Pairs without demand get uniform weights.
    """
    dem = cat.pair_demand(d)
    w = cat.uniform_weights()
    if not np.any(dem > 0):
        return Allocation("weights", w), 0.0
    _check_routable(cat, dem)
    paths = _active_paths(cat, dem)
    p = LpProblem("min")
    for q in paths:
        s, dd = cat.pairs[q // cat.k]
        # the per-pair sum constraint already caps each weight at 1
        p.add_var(f"w_{s}_{dd}_{q % cat.k}")
    mlu = p.add_var("mlu")
    scale = dem[paths // cat.k]
    for e in range(t.num_edges):
        on = np.flatnonzero(cat.path_edge[paths, e])
        if on.size == 0:
            continue
        p.add_constraint((np.append(on, mlu), np.append(scale[on], -t.capacities[e])), "<=", 0.0)
    pair_of = paths // cat.k
    for i in np.flatnonzero(dem > 0):
        idx = np.flatnonzero(pair_of == i)
        p.add_constraint((idx, np.ones(idx.size)), "=", 1.0)
    p.set_objective({mlu: 1.0})
    res = _solve(p, tol)
    w = w.reshape(cat.num_pairs, cat.k)
    w[dem > 0] = 0.0
    w = w.reshape(-1)
    w[paths] = res.x[:-1]
    alloc = Allocation("weights", w)
    return alloc, eval_mlu(alloc, dem, cat, t)


def build_flow_lp(t: Topology, cat: PathCatalog, d, objective: str, capacities=None):
    """Max total flow or max concurrent factor with capacity and demand caps."""
    dem = cat.pair_demand(d)
    caps = t.capacities if capacities is None else np.asarray(capacities, float)
    paths = _active_paths(cat, dem)
    p = LpProblem("max")
    for q in paths:
        s, dd = cat.pairs[q // cat.k]
        p.add_var(f"f_{s}_{dd}_{q % cat.k}")
    for e in range(t.num_edges):
        on = np.flatnonzero(cat.path_edge[paths, e])
        if on.size:
            p.add_constraint((on, np.ones(on.size)), "<=", caps[e])
    pair_of = paths // cat.k
    if objective == "mtf":
        p.set_objective({j: 1.0 for j in range(paths.size)})
    elif objective == "mcf":
        alpha = p.add_var("alpha", ub=1.0)
        p.set_objective({alpha: 1.0})
    else:
        raise ObjectiveError(f"not a flow objective: {objective!r}")
    for i in np.flatnonzero(dem > 0):
        idx = np.flatnonzero(pair_of == i)
        p.add_constraint((idx, np.ones(idx.size)), "<=", dem[i])
        if objective == "mcf":
            p.add_constraint((np.append(idx, alpha), np.append(np.ones(idx.size), -dem[i])),
                             ">=", 0.0)
    return p, paths


def _lp_flow(t, cat, d, objective, tol, capacities=None):
    dem = cat.pair_demand(d)
    x = np.zeros(cat.num_paths)
    if not np.any(dem > 0):
        return Allocation("flows", x), (0.0 if objective == "mtf" else 1.0)
    if objective == "mcf":
        alive_any = cat.alive.reshape(cat.num_pairs, cat.k).any(axis=1)
        if np.any((dem > 0) & ~alive_any):
            return Allocation("flows", x), 0.0
    p, paths = build_flow_lp(t, cat, dem, objective, capacities)
    res = _solve(p, tol)
    x[paths] = res.x[:paths.size]
    return Allocation("flows", x), float(res.objective)


def lp_mtf(t: Topology, cat: PathCatalog, d, tol: float = 1e-7):
    """Maximum total delivered flow. Returns ``(Allocation, mtf)``."""
    return _lp_flow(t, cat, d, "mtf", tol)


def lp_mcf(t: Topology, cat: PathCatalog, d, tol: float = 1e-7):
    """Maximum concurrent flow factor in [0, 1]. Returns ``(Allocation, alpha)``."""
    return _lp_flow(t, cat, d, "mcf", tol)


def solve_objective(objective: str, t: Topology, cat: PathCatalog, d, tol: float = 1e-7):
    """LP-f style optimum for any of the three objectives."""
    if objective == "mlu":
        return lp_mlu_flows(t, cat, d, tol)
    if objective == "mtf":
        return lp_mtf(t, cat, d, tol)
    if objective == "mcf":
        return lp_mcf(t, cat, d, tol)
    raise ObjectiveError(f"unknown objective {objective!r}")


def allocation_value(objective: str, alloc: Allocation, d, cat: PathCatalog,
                     t: Topology) -> float:
    """Objective of an allocation, converting flows to weights for MLU and
    weights to planned flows for the flow objectives."""
    dem = cat.pair_demand(d)
    if objective == "mlu":
        w = alloc.values if alloc.mode == "weights" else flows_to_weights(cat, alloc)
        return eval_mlu(w, dem, cat, t)
    x = alloc.values if alloc.mode == "flows" else alloc.values * np.repeat(dem, cat.k)
    mtf, mcf, _ = eval_mtf_mcf(x, dem, cat, t)
    return mtf if objective == "mtf" else mcf


# --------------------------------------------------------------------------
# grid oracle


@dataclass
class GridResult:
    value: float
    weights: np.ndarray
    evaluations: int
    points: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None


def _simplex_grid(dim: int, step: float) -> np.ndarray:
    """Grid points with spacing ``step`` in ``{u >= 0, sum(u) <= 1}``."""
    m = int(round(1.0 / step))
    if dim == 0:
        return np.zeros((1, 0))
    axes = np.arange(m + 1)
    pts = np.stack(np.meshgrid(*[axes] * dim, indexing="ij"), -1).reshape(-1, dim)
    pts = pts[pts.sum(axis=1) <= m]
    return pts / m


class _GridProblem:
    """Vectorized objective over free coordinates of the positive-demand pairs."""

    def __init__(self, t, cat, scenarios, objective, simplex):
        self.t, self.cat, self.objective, self.simplex = t, cat, objective, simplex
        self.scenarios = [(cat.pair_demand(d), float(p)) for d, p in scenarios]
        active = np.zeros(cat.num_pairs, bool)
        for dem, _ in self.scenarios:
            active |= dem > 0
        first = cat.first_copy() & cat.alive
        self.blocks = []
        for i in np.flatnonzero(active):
            cols = i * cat.k + np.flatnonzero(first[i * cat.k:(i + 1) * cat.k])
            self.blocks.append(cols)
        free = [(len(c) - 1 if simplex == "equal" else len(c)) for c in self.blocks]
        self.free = free
        self.dim = int(sum(free))

    def weights(self, U: np.ndarray) -> np.ndarray:
        """Map free coordinates ``(N, dim)`` to full per-path weights ``(N, P)``."""
        cat = self.cat
        W = np.tile(cat.uniform_weights(), (U.shape[0], 1))
        pos = 0
        for cols, f in zip(self.blocks, self.free):
            W[:, cols[0] - cols[0] % cat.k:cols[0] - cols[0] % cat.k + cat.k] = 0.0
            u = U[:, pos:pos + f]
            pos += f
            if self.simplex == "equal":
                u = np.concatenate([u, 1.0 - u.sum(axis=1, keepdims=True)], axis=1)
            W[:, cols] = u
        return W

    def valid(self, U: np.ndarray) -> np.ndarray:
        ok = np.all(U >= -1e-12, axis=1)
        pos = 0
        for f in self.free:
            ok &= U[:, pos:pos + f].sum(axis=1) <= 1 + 1e-12
            pos += f
        return ok

    def evaluate(self, U: np.ndarray) -> np.ndarray:
        W = self.weights(U)
        PE = self.cat.path_edge
        caps = self.t.capacities
        total = np.zeros(U.shape[0])
        for dem, prob in self.scenarios:
            X = W * np.repeat(dem, self.cat.k)
            load = X @ PE
            if self.objective == "mlu":
                val = (load / caps).max(axis=1) if caps.size else np.zeros(len(U))
            else:
                gamma = np.maximum((load / caps).max(axis=1), 1.0) if caps.size else np.ones(len(U))
                sent = X.reshape(len(U), self.cat.num_pairs, self.cat.k).sum(axis=2) / gamma[:, None]
                got = np.minimum(sent, dem)
                if self.objective == "mtf":
                    val = got.sum(axis=1)
                else:
                    pos = dem > 0
                    val = (got[:, pos] / dem[pos]).min(axis=1) if pos.any() else np.ones(len(U))
            total += prob * val
        return total


def grid_oracle(t: Topology, cat: PathCatalog, scenarios: Sequence, objective: str,
                step: float = 1e-3, simplex: str = "equal", refine: int = 0,
                keep_surface: bool = False, max_dim: int = 4,
                chunk: int = 200_000) -> GridResult:
    """Exhaustive search of the expected objective over a weight grid.

    ``scenarios`` is a list of ``(demand, probability)``. Every pair with
    demand gets one coordinate per distinct candidate path; with
    ``simplex="equal"`` its weights sum to one, with ``"sub"`` to at most one
    (flow objectives then plan ``weight * demand`` per path). ``refine``
    extra passes re-grid a window of +-2 steps around the best few points at
    a quarter of the spacing.
    """
    if objective not in MAXIMIZE:
        raise ObjectiveError(f"unknown objective {objective!r}")
    if simplex not in ("equal", "sub"):
        raise ValueError("simplex must be 'equal' or 'sub'")
    if simplex == "sub" and objective == "mlu":
        raise ValueError("mlu weights must sum to one; use simplex='equal'")
    prob = _GridProblem(t, cat, scenarios, objective, simplex)
    if prob.dim > max_dim:
        raise ValueError(f"grid oracle limited to {max_dim} free dimensions, got {prob.dim}")
    sign = -1.0 if MAXIMIZE[objective] else 1.0

    grids = [_simplex_grid(f, step) for f in prob.free]
    sizes = [len(g) for g in grids]
    n_total = int(np.prod(sizes)) if sizes else 1
    best_vals = np.empty(0)
    best_pts = np.empty((0, prob.dim))
    evaluations = 0
    surface = [] if keep_surface else None
    for start in range(0, n_total, chunk):
        flat = np.arange(start, min(start + chunk, n_total))
        parts = []
        rem = flat
        for g, sz in zip(reversed(grids), reversed(sizes)):
            parts.append(g[rem % sz])
            rem = rem // sz
        U = np.concatenate(parts[::-1], axis=1) if parts else np.zeros((flat.size, 0))
        vals = prob.evaluate(U)
        evaluations += U.shape[0]
        if keep_surface:
            surface.append((U, vals))
        order = np.argsort(sign * vals, kind="stable")[:8]
        best_vals = np.concatenate([best_vals, vals[order]])
        best_pts = np.concatenate([best_pts, U[order]])
        keep = np.argsort(sign * best_vals, kind="stable")[:8]
        best_vals, best_pts = best_vals[keep], best_pts[keep]

    h = step
    for _ in range(refine):
        h_new = h / 4.0
        offsets = np.arange(-8, 9) * h_new
        new_vals, new_pts = [best_vals], [best_pts]
        for centre in best_pts[:4]:
            if prob.dim == 0:
                break
            mesh = np.stack(np.meshgrid(*[offsets] * prob.dim, indexing="ij"), -1)
            U = centre + mesh.reshape(-1, prob.dim)
            U = U[prob.valid(U)]
            U = np.clip(U, 0.0, 1.0)
            vals = prob.evaluate(U)
            evaluations += U.shape[0]
            new_vals.append(vals)
            new_pts.append(U)
        allv = np.concatenate(new_vals)
        allp = np.concatenate(new_pts)
        keep = np.argsort(sign * allv, kind="stable")[:8]
        best_vals, best_pts = allv[keep], allp[keep]
        h = h_new

    w = prob.weights(best_pts[:1])[0]
    result = GridResult(float(best_vals[0]), w, evaluations)
    if keep_surface:
        result.points = np.concatenate([u for u, _ in surface])
        result.values = np.concatenate([v for _, v in surface])
    return result


# --------------------------------------------------------------------------
# heuristics


def _rank_pairs(cat: PathCatalog, dem: np.ndarray) -> np.ndarray:
    """Positive-demand pairs by demand descending, ties in pair order."""
    pos = np.flatnonzero(dem > 0)
    return pos[np.lexsort((pos, -dem[pos]))]


def lp_top(t: Topology, cat: PathCatalog, d, top_fraction: float = 0.1,
           objective: str = "mlu", tol: float = 1e-7):
    """Route the largest demands by LP and pin the rest to their first path.

    For MLU the pinned traffic enters the LP as fixed edge load; for the flow
    objectives it is subtracted from capacity (clamped at zero).
    Returns ``(Allocation, objective value)``.
    """
    if not 0.0 <= top_fraction <= 1.0:
        raise ValueError("top_fraction must lie in [0, 1]")
    dem = cat.pair_demand(d)
    ranked = _rank_pairs(cat, dem)
    n_top = int(math.ceil(top_fraction * ranked.size - 1e-12))
    top, rest = ranked[:n_top], ranked[n_top:]
    first = cat.first_path_weights()
    rest_dem = np.zeros_like(dem)
    rest_dem[rest] = dem[rest]
    top_dem = np.zeros_like(dem)
    top_dem[top] = dem[top]
    bg_flow = first * np.repeat(rest_dem, cat.k)
    background = bg_flow @ cat.path_edge
    if objective == "mlu":
        w = first.copy()
        if top.size:
            p, paths = build_mlu_flow_lp(t, cat, top_dem, background)
            res = _solve(p, tol)
            x = np.zeros(cat.num_paths)
            x[paths] = res.x[:-1]
            w_top = flows_to_weights(cat, x)
            mask = np.repeat(top_dem > 0, cat.k)
            w[mask] = w_top[mask]
        alloc = Allocation("weights", w)
        return alloc, eval_mlu(alloc, dem, cat, t)
    residual = t.capacities - background
    if np.any(residual < 0):
        log.warning("pinned demand exceeds capacity on %d links; clamping residual to 0",
                    int(np.sum(residual < 0)))
        residual = np.maximum(residual, 0.0)
    x = bg_flow.copy()
    if top.size:
        alloc_top, _ = _lp_flow(t, cat, top_dem, objective, tol, capacities=residual)
        x += alloc_top.values
    alloc = Allocation("flows", x)
    mtf, mcf, _ = eval_mtf_mcf(alloc, dem, cat, t)
    return alloc, (mtf if objective == "mtf" else mcf)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("PARTFLOW_WORKERS", "1")))
    except ValueError:
        return 1


def pop_solve(t: Topology, cat: PathCatalog, d, k: int, objective: str = "mlu",
              seed=None, tol: float = 1e-7):
    """POP: ``k`` topology replicas at ``c/k`` capacity, each pair assigned to
    one replica uniformly at random, replicas solved independently.

    Returns ``(merged Allocation, objective value, replica assignment)``.
    """
    if k < 1:
        raise ValueError("replica count must be at least 1")
    dem = cat.pair_demand(d)
    rng = np.random.default_rng(seed)
    assign = rng.integers(0, k, size=cat.num_pairs)
    sub_t = Topology(t.node_count, t.edges, t.capacities / k)

    def run(r):
        sub = np.where(assign == r, dem, 0.0)
        return solve_objective(objective, sub_t, cat, sub, tol)

    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        results = list(pool.map(run, range(k)))
    if objective == "mlu":
        w = cat.uniform_weights()
        for r, (alloc, _) in enumerate(results):
            sub_w = flows_to_weights(cat, alloc)
            mask = np.repeat((assign == r) & (dem > 0), cat.k)
            w[mask] = sub_w[mask]
        merged = Allocation("weights", w)
        return merged, eval_mlu(merged, dem, cat, t), assign
    x = np.sum([alloc.values for alloc, _ in results], axis=0)
    merged = Allocation("flows", x)
    mtf, mcf, _ = eval_mtf_mcf(merged, dem, cat, t)
    return merged, (mtf if objective == "mtf" else mcf), assign


def shortest_path_value(objective: str, t: Topology, cat: PathCatalog, d) -> float:
    """Objective when every pair sends all demand on its first path."""
    alloc = Allocation("weights", cat.first_path_weights())
    return allocation_value(objective, alloc, d, cat, t)
