"""The three MCF objectives evaluated from path weights or planned path flows."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .paths import PathCatalog
from .topology import Topology

OBJECTIVES = ("mlu", "mtf", "mcf")
MAXIMIZE = {"mlu": False, "mtf": True, "mcf": True}


class ObjectiveError(ValueError):
    pass


@dataclass
class Allocation:
    """Per-path split weights (``mode="weights"``) or planned flows (``"flows"``)."""

    mode: str
    values: np.ndarray

    def __post_init__(self):
        if self.mode not in ("weights", "flows"):
            raise ObjectiveError(f"unknown allocation mode {self.mode!r}")
        self.values = np.asarray(self.values)

    def check(self, cat: PathCatalog, demand=None, atol: float = 1e-9) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (cat.num_paths,):
            raise ObjectiveError(f"allocation has {v.size} entries, catalog has {cat.num_paths}")
        if np.any(v < -atol):
            raise ObjectiveError("allocation has negative entries")
        if self.mode == "weights":
            sums = v.reshape(cat.num_pairs, cat.k).sum(axis=1)
            mask = np.ones(cat.num_pairs, bool) if demand is None else cat.pair_demand(demand) > 0
            bad = np.flatnonzero(mask & (np.abs(sums - 1.0) > atol))
            if bad.size:
                raise ObjectiveError(f"weights of pair {cat.pairs[bad[0]]} sum to {sums[bad[0]]}")


def _values(a, mode: str) -> np.ndarray:
    if isinstance(a, Allocation):
        if a.mode != mode:
            raise ObjectiveError(f"expected a {mode} allocation, got {a.mode}")
        a = a.values
    return np.asarray(a, dtype=np.float64)


def _pair_sums(cat: PathCatalog, v: np.ndarray) -> np.ndarray:
    return v.reshape(cat.num_pairs, cat.k).sum(axis=1)


def normalize_weights(cat: PathCatalog, w, demand=None) -> np.ndarray:
    """Rescale each pair's weights to sum to one.

    A pair whose weights are all zero is an error when it carries demand and
    is otherwise left at zero.
    """
    w = _values(w, "weights")
    total = _pair_sums(cat, w)
    zero = total <= 0
    if demand is not None and np.any(zero):
        dem = cat.pair_demand(demand)
        bad = np.flatnonzero(zero & (dem > 0))
        if bad.size:
            raise ObjectiveError(
                f"pair {cat.pairs[bad[0]]} has demand but all-zero weights")
    safe = np.where(zero, 1.0, total)
    return w / np.repeat(safe, cat.k)


def edge_loads(cat: PathCatalog, path_flow: np.ndarray) -> np.ndarray:
    return path_flow @ cat.path_edge


def eval_mlu(a, d, cat: PathCatalog, t: Topology) -> float:
    """Maximum link utilization of a weight allocation; weights are
    renormalized per pair first."""
    dem = cat.pair_demand(d)
    w = normalize_weights(cat, a, dem)
    if t.num_edges == 0:
        return 0.0
    load = edge_loads(cat, np.repeat(dem, cat.k) * w)
    return float(np.max(load / t.capacities))


def eval_mtf_mcf(a, d, cat: PathCatalog, t: Topology):
    """Total and concurrent flow after uniform feasibility scaling.

    Returns ``(mtf, mcf, scaled_flows)``. The planned flows are divided by
    ``gamma = max(max_e load_e / c_e, 1)``, then each pair delivers at most
    its demand.
    """
    x = _values(a, "flows")
    if np.any(x < 0):
        raise ObjectiveError("planned flows must be nonnegative")
    dem = cat.pair_demand(d)
    gamma = 1.0
    if t.num_edges:
        gamma = max(float(np.max(edge_loads(cat, x) / t.capacities)), 1.0)
    scaled = x / gamma
    delivered = np.minimum(_pair_sums(cat, scaled), dem)
    mtf = float(delivered.sum())
    pos = dem > 0
    mcf = float(np.min(delivered[pos] / dem[pos])) if pos.any() else 1.0
    return mtf, mcf, scaled


def delivered_flow(a, d, cat: PathCatalog, t: Topology) -> np.ndarray:
    """Per-pair delivered flow after feasibility scaling."""
    dem = cat.pair_demand(d)
    _, _, scaled = eval_mtf_mcf(a, dem, cat, t)
    return np.minimum(_pair_sums(cat, scaled), dem)


def eval_avg_satisfaction(a, d, cat: PathCatalog, t: Topology) -> float:
    """Mean delivered/demand ratio over pairs with positive demand."""
    dem = cat.pair_demand(d)
    pos = dem > 0
    if not pos.any():
        return 1.0
    f = delivered_flow(a, dem, cat, t)
    return float(np.mean(f[pos] / dem[pos]))


def subgradient_mlu(a, d, cat: PathCatalog, t: Topology) -> np.ndarray:
    """Gradient of the utilization of the first maximizing edge with respect
    to the (unnormalized) path weights."""
    dem = cat.pair_demand(d)
    w = _values(a, "weights")
    g = np.zeros(cat.num_paths)
    if t.num_edges == 0 or not np.any(dem > 0):
        return g
    load = edge_loads(cat, np.repeat(dem, cat.k) * w)
    e = int(np.argmax(load / t.capacities))
    return np.repeat(dem, cat.k) * cat.path_edge[:, e] / t.capacities[e]


def evaluate(objective: str, a, d, cat: PathCatalog, t: Topology) -> float:
    """Dispatch to the objective named ``mlu``, ``mtf`` or ``mcf``."""
    if objective == "mlu":
        return eval_mlu(a, d, cat, t)
    if objective == "mtf":
        return eval_mtf_mcf(a, d, cat, t)[0]
    if objective == "mcf":
        return eval_mtf_mcf(a, d, cat, t)[1]
    raise ObjectiveError(f"unknown objective {objective!r}")


def expected_objective(objective: str, a, scenarios: Sequence, cat: PathCatalog,
                       t: Topology) -> float:
    """Probability-weighted objective over ``(demand, probability)`` scenarios."""
    return float(sum(p * evaluate(objective, a, d, cat, t) for d, p in scenarios))


def weights_to_flows(cat: PathCatalog, w, d) -> np.ndarray:
    """Planned flows ``w_p * D_{s,t}`` from split weights."""
    dem = cat.pair_demand(d)
    return normalize_weights(cat, w) * np.repeat(dem, cat.k)


def flows_to_weights(cat: PathCatalog, x, fallback=None) -> np.ndarray:
    """Per-pair flow shares; pairs without flow get ``fallback`` (uniform)."""
    x = _values(x, "flows")
    total = np.repeat(_pair_sums(cat, x), cat.k)
    base = cat.uniform_weights() if fallback is None else np.asarray(fallback, float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, x / np.where(total > 0, total, 1.0), base)
