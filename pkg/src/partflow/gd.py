"""First-order allocators: projected subgradient descent on split weights for
MLU and normalized gradient ascent on planned flows for MTF/MCF."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .objectives import (Allocation, ObjectiveError, eval_mlu, eval_mtf_mcf,
                         subgradient_mlu)
from .paths import PathCatalog
from .topology import Topology

SCHEDULES = ("constant", "inv-sqrt", "diminishing")


@dataclass
class GdConfig:
    """Step size ``step`` (``None`` picks the textbook constant for MLU),
    schedule, iteration budget and whether to return the running average."""

    iterations: int = 1000
    step: Optional[float] = None
    schedule: str = "constant"
    averaging: bool = True
    plateau_tol: Optional[float] = None
    plateau_window: int = 100

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")

    def step_at(self, base: float, it: int) -> float:
        if self.schedule == "constant":
            return base
        if self.schedule == "inv-sqrt":
            return base / math.sqrt(it)
        return base / it


@dataclass
class GdTrace:
    objective: list = field(default_factory=list)
    step: list = field(default_factory=list)

    @property
    def best(self) -> np.ndarray:
        return np.minimum.accumulate(self.objective) if self.objective else np.empty(0)

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "step"])
            for i, (o, s) in enumerate(zip(self.objective, self.step), start=1):
                w.writerow([i, repr(float(o)), repr(float(s))])


def project_simplex_blocks(v, cat: PathCatalog) -> Allocation:
    """Euclidean projection of each pair's block onto the probability simplex."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (cat.num_paths,):
        raise ValueError(f"vector has {v.size} entries, catalog has {cat.num_paths}")
    y = v.reshape(cat.num_pairs, cat.k)
    u = -np.sort(-y, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, cat.k + 1)
    cond = u - css / ind > 0
    rho = cat.k - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(cat.num_pairs), rho] / (rho + 1)
    return Allocation("weights", np.maximum(y - theta[:, None], 0.0).reshape(-1))


def _scenario_list(scenarios) -> list:
    out = [(np.asarray(d, float), float(p)) for d, p in scenarios]
    total = sum(p for _, p in out)
    if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
        raise ValueError(f"scenario probabilities sum to {total}, not 1")
    return out


def rate_constants(t: Topology, cat: PathCatalog, scenarios) -> tuple[float, float]:
    """``(B, rho)``: the weight-norm bound over pairs that ever carry demand,
    and the MLU Lipschitz constant ``D_max / c_min``."""
    scenarios = _scenario_list(scenarios)
    dems = np.array([cat.pair_demand(d) for d, _ in scenarios])
    active = int(np.sum(dems.max(axis=0) > 0))
    B = math.sqrt(active * cat.k)
    rho = float(dems.max()) / t.c_min if t.num_edges else 0.0
    return B, rho


def textbook_step(t: Topology, cat: PathCatalog, scenarios, iterations: int) -> float:
    """``eta = sqrt(B^2 / (rho^2 T))``; guarantees an averaged-iterate gap of
    at most ``B * rho / sqrt(T)``."""
    B, rho = rate_constants(t, cat, scenarios)
    if rho == 0 or B == 0:
        return 1.0
    return math.sqrt(B * B / (rho * rho * iterations))


def expected_mlu(w, scenarios, cat: PathCatalog, t: Topology) -> float:
    return float(sum(p * eval_mlu(w, d, cat, t) for d, p in scenarios))


def gd_minimize_mlu(t: Topology, cat: PathCatalog, scenarios: Sequence,
                    cfg: GdConfig = None, init=None):
    """Projected subgradient descent on the expected MLU.

    Returns ``(Allocation, GdTrace)``; with ``cfg.averaging`` the allocation is
    the mean of the iterates ``w_1..w_T``.
    """
    cfg = cfg or GdConfig()
    scenarios = _scenario_list(scenarios)
    w = cat.uniform_weights() if init is None else np.array(
        init.values if isinstance(init, Allocation) else init, dtype=float)
    w = project_simplex_blocks(w, cat).values
    base = cfg.step if cfg.step is not None else textbook_step(t, cat, scenarios, cfg.iterations)
    trace = GdTrace()
    acc = np.zeros_like(w)
    count = 0
    for it in range(1, cfg.iterations + 1):
        acc += w
        count += 1
        obj = 0.0
        g = np.zeros_like(w)
        for d, p in scenarios:
            obj += p * eval_mlu(w, d, cat, t)
            g += p * subgradient_mlu(w, d, cat, t)
        eta = cfg.step_at(base, it)
        trace.objective.append(obj)
        trace.step.append(eta)
        if not np.any(g):
            break
        if _plateaued(trace.objective, cfg, maximize=False):
            break
        w = project_simplex_blocks(w - eta * g, cat).values
    final = acc / count if cfg.averaging else w
    return Allocation("weights", final), trace


def _plateaued(values, cfg: GdConfig, maximize: bool) -> bool:
    if cfg.plateau_tol is None or len(values) <= cfg.plateau_window:
        return False
    arr = np.asarray(values)
    best = arr.max() if maximize else arr.min()
    before = arr[:-cfg.plateau_window]
    old = before.max() if maximize else before.min()
    gain = (best - old) if maximize else (old - best)
    return gain <= cfg.plateau_tol * max(abs(old), 1e-12)


def _flow_objective(x, scenarios, cat, t, objective):
    total = 0.0
    for d, p in scenarios:
        mtf, mcf, _ = eval_mtf_mcf(x, d, cat, t)
        total += p * (mtf if objective == "mtf" else mcf)
    return total


def _flow_gradient(x, dem, cat, t, objective, kink_tol=1e-9):
    """Ascent direction of one scenario's scaled objective, or ``None`` when
    ``x`` sits on a kink where the analytic gradient is ambiguous."""
    k = cat.k
    load = x @ cat.path_edge
    util = load / t.capacities
    top = util.max() if util.size else 0.0
    if abs(top - 1.0) <= kink_tol:
        return None
    gamma = max(top, 1.0)
    sent = x.reshape(cat.num_pairs, k).sum(axis=1) / gamma
    if np.any(np.abs(sent - dem)[dem > 0] <= kink_tol):
        return None
    dgamma = np.zeros(cat.num_paths)
    if gamma > 1.0:
        if np.sum(util >= top - kink_tol) > 1:
            return None
        e = int(np.argmax(util))
        dgamma = cat.path_edge[:, e] / t.capacities[e]
    # d(sent_i)/dx_p = [p in i]/gamma - sent_i * dgamma_p / gamma
    unsat = (sent < dem).astype(float)
    if objective == "mtf":
        coef = unsat
        g = np.repeat(coef, k) / gamma - dgamma * float(np.dot(coef, sent)) / gamma
        return g
    pos = dem > 0
    if not pos.any():
        return np.zeros(cat.num_paths)
    ratio = np.where(pos, np.minimum(sent, dem) / np.where(pos, dem, 1.0), np.inf)
    low = ratio.min()
    if low >= 1.0:
        return np.zeros(cat.num_paths)
    arg = np.flatnonzero(ratio <= low + kink_tol)
    if arg.size > 1:
        return None
    i = int(arg[0])
    coef = np.zeros(cat.num_pairs)
    coef[i] = 1.0 / dem[i]
    return np.repeat(coef, k) / gamma - dgamma * sent[i] * coef[i] / gamma


def _fd_gradient(x, scenarios, cat, t, objective, h=1e-6):
    g = np.zeros_like(x)
    for p in range(x.size):
        up = x.copy()
        dn = x.copy()
        up[p] += h
        dn[p] = max(dn[p] - h, 0.0)
        g[p] = (_flow_objective(up, scenarios, cat, t, objective)
                - _flow_objective(dn, scenarios, cat, t, objective)) / (up[p] - dn[p])
    return g


def _mcf_active_direction(x, scenarios, cat, t, tol=1e-6):
    """Sum of the gradients of every pair within ``tol`` of the minimum
    ratio; raises all tied bottleneck pairs at once."""
    g = np.zeros_like(x)
    for d, prob in scenarios:
        dem = cat.pair_demand(d)
        pos = dem > 0
        if not pos.any():
            continue
        load = x @ cat.path_edge
        util = load / t.capacities
        gamma = max(util.max(), 1.0) if util.size else 1.0
        sent = x.reshape(cat.num_pairs, cat.k).sum(axis=1) / gamma
        ratio = np.where(pos, np.minimum(sent, dem) / np.where(pos, dem, 1.0), np.inf)
        low = ratio.min()
        if low >= 1.0:
            continue
        coef = np.where(ratio <= low + tol, 1.0 / np.where(pos, dem, 1.0), 0.0)
        dgamma = np.zeros(cat.num_paths)
        if gamma > 1.0:
            hot = util >= util.max() - tol
            dgamma = (cat.path_edge[:, hot] / t.capacities[hot]).sum(axis=1)
        g += prob * (np.repeat(coef, cat.k) / gamma - dgamma * float(np.dot(coef, sent)) / gamma)
    return g


def ga_maximize_flow(t: Topology, cat: PathCatalog, scenarios: Sequence,
                     cfg: GdConfig = None, init=None, objective: str = "mtf"):
    """Normalized gradient ascent on planned path flows; returns the best
    iterate seen as ``(Allocation, GdTrace)`` (trace holds best-so-far values)."""
    if objective not in ("mtf", "mcf"):
        raise ObjectiveError(f"flow ascent supports 'mtf' or 'mcf', got {objective!r}")
    cfg = cfg or GdConfig(iterations=2000, schedule="inv-sqrt")
    scenarios = _scenario_list(scenarios)
    x = np.zeros(cat.num_paths) if init is None else np.array(
        init.values if isinstance(init, Allocation) else init, dtype=float)
    if np.any(x < 0):
        raise ValueError("initial planned flows must be nonnegative")
    dmax = max(float(np.max(cat.pair_demand(d))) for d, _ in scenarios)
    base = cfg.step if cfg.step is not None else max(dmax, 1e-12)
    dead = ~cat.alive
    best_x = x.copy()
    best = _flow_objective(x, scenarios, cat, t, objective)
    trace = GdTrace()
    for it in range(1, cfg.iterations + 1):
        if objective == "mcf":
            g = _mcf_active_direction(x, scenarios, cat, t)
        else:
            g = np.zeros_like(x)
            for d, p in scenarios:
                gi = _flow_gradient(x, cat.pair_demand(d), cat, t, objective)
                if gi is None:
                    g = _fd_gradient(x, scenarios, cat, t, objective)
                    break
                g += p * gi
        g[dead] = 0.0
        norm = float(np.linalg.norm(g))
        eta = cfg.step_at(base, it)
        if norm == 0.0:
            trace.objective.append(best)
            trace.step.append(0.0)
            break
        x = np.maximum(x + eta * g / norm, 0.0)
        val = _flow_objective(x, scenarios, cat, t, objective)
        if val > best:
            best, best_x = val, x.copy()
        trace.objective.append(best)
        trace.step.append(eta)
        if _plateaued(trace.objective, cfg, maximize=True):
            break
    return Allocation("flows", best_x), trace
