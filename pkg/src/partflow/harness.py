"""Experiment orchestration: per-timestep solving, scenarios, normalization
against the exact LP, timing and result files."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import __version__
from .demand import DEFAULT_WINDOW, PREDICTORS, inject_fluctuation, predict
from .exact import (lp_top, lp_weights_mlu, pop_solve, solve_objective)
from .gd import GdConfig, ga_maximize_flow, gd_minimize_mlu
from .objectives import MAXIMIZE, OBJECTIVES, Allocation, evaluate, flows_to_weights
from .paths import PathCatalog
from .policy import PolicyParams, allocate, rescale_on_failure
from .topology import Topology, zero_capacities

log = logging.getLogger(__name__)

BASE_METHODS = ("lp-f", "lp-w", "lp-top", "pop", "gd", "pram", "drl-mono",
                "shortest-path", "uniform")
POLICY_METHODS = ("pram", "drl-mono")
WORKERS_ENV = "PARTFLOW_WORKERS"


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending setting."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(WORKERS_ENV, f"expected an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(WORKERS_ENV, "must be at least 1")
    return n


def split_method(method: str) -> tuple[str, bool]:
    """``"lp-f-pred"`` -> ``("lp-f", True)``."""
    if method.endswith("-pred"):
        return method[:-5], True
    return method, False


@dataclass
class ExperimentConfig:
    topology: str = "case-study"
    trace: Optional[str] = None
    objective: str = "mlu"
    method: str = "lp-f"
    predictor: str = "moving-average"
    seed: int = 0
    failures: int = 0
    alpha: float = 0.0
    k: int = 4
    window: int = DEFAULT_WINDOW
    split: tuple = (7, 1, 2)
    top_fraction: float = 0.1
    pop_k: int = 2
    gd_iterations: int = 1000
    policy: Optional[str] = None
    output: Optional[str] = None

    def __post_init__(self):
        self.split = tuple(self.split)
        self.validate()

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ConfigError("objective", f"must be one of {OBJECTIVES}, got {self.objective!r}")
        base, _ = split_method(self.method)
        if base not in BASE_METHODS:
            raise ConfigError("method", f"unknown method {self.method!r}")
        if base == "lp-w" and self.objective != "mlu":
            raise ConfigError("method", "lp-w is only defined for the mlu objective")
        if base in POLICY_METHODS and self.policy is None:
            raise ConfigError("policy", f"method {base} needs a trained policy file")
        if self.predictor not in PREDICTORS:
            raise ConfigError("predictor", f"must be one of {PREDICTORS}")
        if self.failures < 0:
            raise ConfigError("failures", "must be nonnegative")
        if self.alpha < 0 or not math.isfinite(self.alpha):
            raise ConfigError("alpha", "must be a finite nonnegative number")
        if self.k < 1:
            raise ConfigError("k", "must be at least 1")
        if self.window < 1:
            raise ConfigError("window", "must be at least 1")
        if len(self.split) != 3 or any(r < 0 for r in self.split) or self.split[2] <= 0:
            raise ConfigError("split", "needs three nonnegative ratios with a positive test share")
        if not 0.0 <= self.top_fraction <= 1.0:
            raise ConfigError("top_fraction", "must lie in [0, 1]")
        if self.pop_k < 1:
            raise ConfigError("pop_k", "must be at least 1")
        if self.gd_iterations < 1:
            raise ConfigError("gd_iterations", "must be at least 1")

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["split"] = list(self.split)
        return d

    @property
    def digest(self) -> str:
        """Hash of every setting except the output location."""
        d = self.as_dict()
        d.pop("output")
        return _digest(d)

    @property
    def instance_digest(self) -> str:
        """Hash of the settings that define the instance, so runs of
        different methods on the same instance share it."""
        d = self.as_dict()
        for key in ("method", "predictor", "top_fraction", "pop_k", "gd_iterations",
                    "policy", "output"):
            d.pop(key)
        return _digest(d)


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ----------------------------------------------------------------- scenarios

@dataclass
class ScenarioView:
    topology: Topology
    catalog: PathCatalog
    demand: np.ndarray
    failed: list = field(default_factory=list)
    disconnected: list = field(default_factory=list)


def _stream(seed: int, step: int, tag: int):
    return np.random.default_rng(np.random.SeedSequence([seed, step, tag]))


def apply_scenario(cfg: ExperimentConfig, t: Topology, cat: PathCatalog, d,
                   history=None, step: int = 0) -> ScenarioView:
    """Perturb the ground-truth matrix and/or fail links for one timestep.

    Failed links are drawn uniformly without replacement from a per-step
    seed; pairs left without a surviving path lose their demand.
    """
    d = np.asarray(d, dtype=float)
    if cfg.failures > t.num_edges:
        raise ConfigError("failures", f"asked for {cfg.failures} failures on {t.num_edges} links")
    if cfg.alpha > 0:
        if history is None or len(history) == 0:
            raise ConfigError("alpha", "fluctuation needs a demand history")
        d = inject_fluctuation(d, history, cfg.alpha, seed=_stream(cfg.seed, step, 1))
    if cfg.failures == 0:
        return ScenarioView(t, cat, d)
    failed = sorted(int(e) for e in _stream(cfg.seed, step, 2).choice(
        t.num_edges, size=cfg.failures, replace=False))
    tf = zero_capacities(t, failed)
    cf = cat.with_failures(t, failed)
    alive_any = cf.alive.reshape(cf.num_pairs, cf.k).any(axis=1)
    disconnected = [int(i) for i in np.flatnonzero(~alive_any)]
    d = d.copy()
    for i in disconnected:
        d[cat.pairs[i]] = 0.0
    return ScenarioView(tf, cf, d, failed, disconnected)


def repair(alloc: Allocation, cat: PathCatalog) -> Allocation:
    """Move an allocation off dead paths: weights are rescaled over the
    survivors, planned flows on dead paths are dropped."""
    if cat.alive.all():
        return alloc
    if alloc.mode == "weights":
        return rescale_on_failure(alloc, [], cat)[0]
    x = np.where(cat.alive, alloc.values, 0.0)
    return Allocation("flows", x)


# ------------------------------------------------------------------- solving

@dataclass
class StepRecord:
    step: int
    raw: float
    oracle: float
    normalized: float
    solve_time: float
    failed: list = field(default_factory=list)
    disconnected: int = 0


def normalize(value: float, oracle: float) -> float:
    if oracle == 0:
        return 1.0 if value == 0 else math.inf
    return value / oracle


def solve_method(cfg: ExperimentConfig, t: Topology, cat: PathCatalog, d, history=None,
                 policy: PolicyParams = None, step: int = 0, gd_trace: list = None):
    """Run one method on one matrix; returns ``(Allocation, seconds)``.

    ``d`` is what a non-predicting method gets to see; predicting variants
    and policies only see ``history``.
    """
    base, pred = split_method(cfg.method)
    if pred or base in POLICY_METHODS:
        if history is None or len(history) == 0:
            raise ConfigError("method", f"{cfg.method} needs a demand history")
    inp = predict(history, cfg.predictor, cfg.window) if pred else np.asarray(d, float)
    obj = cfg.objective
    start = time.perf_counter()
    if base == "lp-f":
        alloc = solve_objective(obj, t, cat, inp)[0]
    elif base == "lp-w":
        alloc = lp_weights_mlu(t, cat, inp)[0]
    elif base == "lp-top":
        alloc = lp_top(t, cat, inp, cfg.top_fraction, obj)[0]
    elif base == "pop":
        alloc = pop_solve(t, cat, inp, cfg.pop_k, obj, seed=_stream(cfg.seed, step, 3))[0]
    elif base == "gd":
        gcfg = GdConfig(iterations=cfg.gd_iterations)
        if obj == "mlu":
            alloc, trace = gd_minimize_mlu(t, cat, [(inp, 1.0)], gcfg)
        else:
            gcfg.schedule = "inv-sqrt"
            alloc, trace = ga_maximize_flow(t, cat, [(inp, 1.0)], gcfg, objective=obj)
        if gd_trace is not None:
            gd_trace.append(trace)
    elif base in POLICY_METHODS:
        alloc = allocate(policy, t, cat, history)
    elif base == "shortest-path":
        alloc = _as_objective(Allocation("weights", cat.first_path_weights()), inp, cat, obj)
    else:
        alloc = _as_objective(Allocation("weights", cat.uniform_weights()), inp, cat, obj)
    elapsed = time.perf_counter() - start
    return alloc, elapsed


def _as_objective(alloc: Allocation, d, cat, objective):
    if objective == "mlu":
        return alloc
    return Allocation("flows", alloc.values * np.repeat(cat.pair_demand(d), cat.k))


def score(objective: str, alloc: Allocation, d, cat: PathCatalog, t: Topology) -> float:
    """Objective of an allocation on the realized matrix. Weight allocations
    are turned into planned flows for the flow objectives and vice versa."""
    dem = cat.pair_demand(d)
    if objective == "mlu":
        if alloc.mode == "flows":
            alloc = repair(Allocation("weights", flows_to_weights(cat, alloc)), cat)
        return evaluate("mlu", alloc, dem, cat, t)
    if alloc.mode == "weights":
        alloc = Allocation("flows", alloc.values * np.repeat(dem, cat.k))
    return evaluate(objective, alloc, dem, cat, t)


# ---------------------------------------------------------------- evaluation

@dataclass
class RunResult:
    config: ExperimentConfig
    records: list

    @property
    def raw(self) -> np.ndarray:
        return np.array([r.raw for r in self.records])

    @property
    def normalized(self) -> np.ndarray:
        return np.array([r.normalized for r in self.records])

    def summary(self) -> dict:
        raw, nrm = self.raw, self.normalized
        times = np.array([r.solve_time for r in self.records])
        finite = nrm[np.isfinite(nrm)]
        return {
            "version": __version__,
            "config": self.config.as_dict(),
            "config_digest": self.config.digest,
            "instance_digest": self.config.instance_digest,
            "method": self.config.method,
            "objective": self.config.objective,
            "seed": self.config.seed,
            "steps": len(self.records),
            "raw_mean": _f(raw.mean()) if raw.size else None,
            "normalized_mean": _f(finite.mean()) if finite.size else None,
            "normalized_min": _f(finite.min()) if finite.size else None,
            "normalized_max": _f(finite.max()) if finite.size else None,
            "solve_time_mean": _f(times.mean()) if times.size else None,
            "solve_time_total": _f(times.sum()) if times.size else None,
        }

    def write(self, outdir: Union[str, Path], stem: Optional[str] = None) -> tuple[Path, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        stem = stem or f"{self.config.method}-{self.config.objective}"
        jpath, cpath = outdir / f"{stem}.json", outdir / f"{stem}.csv"
        summary = self.summary()
        summary["detail"] = cpath.name
        jpath.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        with open(cpath, "w", newline="") as fh:
            fh.write(f"# config-digest: {self.config.digest}\n")
            w = csv.writer(fh)
            w.writerow(["step", "raw", "oracle", "normalized", "solve_time",
                        "failed_edges", "disconnected_pairs"])
            for r in self.records:
                w.writerow([r.step, repr(r.raw), repr(r.oracle), repr(r.normalized),
                            repr(r.solve_time), " ".join(map(str, r.failed)), r.disconnected])
        return jpath, cpath


def _f(x) -> float:
    return float(x)


def eval_steps(cfg: ExperimentConfig, length: int) -> range:
    """Indices of the test share of a chronological train/val/test split,
    skipping steps without a full history window."""
    total = float(sum(cfg.split))
    start = int(math.floor((cfg.split[0] + cfg.split[1]) / total * length))
    return range(max(start, cfg.window), length)


def evaluate_series(cfg: ExperimentConfig, t: Topology, cat: PathCatalog, series,
                    steps=None, policy: PolicyParams = None) -> RunResult:
    """Replay ``steps`` (default: the test split) of a demand series.

    Each step applies the scenario to the ground-truth matrix, runs the
    method, and normalizes against the exact LP on that same matrix.
    """
    mats = series.matrices if hasattr(series, "matrices") else np.asarray(series, float)
    base, _ = split_method(cfg.method)
    if base in POLICY_METHODS and policy is None:
        policy = PolicyParams.load(cfg.policy)
    steps = list(eval_steps(cfg, mats.shape[0]) if steps is None else steps)
    if not steps:
        raise ConfigError("trace", "no evaluable steps (series too short for the window/split)")

    def one(step: int) -> StepRecord:
        hist = mats[max(0, step - cfg.window):step]
        view = apply_scenario(cfg, t, cat, mats[step], hist, step)
        alloc, secs = solve_method(cfg, view.topology, view.catalog, view.demand,
                                   hist, policy, step)
        alloc = repair(alloc, view.catalog)
        raw = score(cfg.objective, alloc, view.demand, view.catalog, view.topology)
        oracle = solve_objective(cfg.objective, view.topology, view.catalog, view.demand)[1]
        return StepRecord(step, float(raw), float(oracle), normalize(raw, oracle), secs,
                          view.failed, len(view.disconnected))

    n = workers()
    if n == 1:
        records = [one(s) for s in steps]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            records = list(pool.map(one, steps))
    return RunResult(cfg, records)


# -------------------------------------------------------------------- report

class ReportError(ValueError):
    pass


def _read_detail_digest(path: Path) -> str:
    with open(path) as fh:
        first = fh.readline().strip()
    prefix = "# config-digest: "
    if not first.startswith(prefix):
        raise ReportError(f"{path}: missing config digest header")
    return first[len(prefix):]


def load_summary(path: Union[str, Path]) -> dict:
    """Read a JSON summary and check it against its config and detail file."""
    path = Path(path)
    s = json.loads(path.read_text())
    try:
        cfg = ExperimentConfig(**{k: v for k, v in s["config"].items()})
    except (KeyError, TypeError, ConfigError) as exc:
        raise ReportError(f"{path}: unreadable config ({exc})") from None
    if cfg.digest != s.get("config_digest"):
        raise ReportError(f"{path}: config digest does not match its config")
    detail = path.parent / s.get("detail", "")
    if s.get("detail") and detail.exists():
        if _read_detail_digest(detail) != s["config_digest"]:
            raise ReportError(f"{detail}: config digest differs from {path.name}")
    return s


def report(paths, allow_mixed: bool = False) -> list[dict]:
    """Rows ``method, objective, steps, raw, normalized, time`` for runs that
    share one instance digest (unless ``allow_mixed``)."""
    summaries = [load_summary(p) for p in paths]
    if not summaries:
        raise ReportError("nothing to report")
    digests = {s["instance_digest"] for s in summaries}
    if len(digests) > 1 and not allow_mixed:
        raise ReportError(f"runs come from {len(digests)} different instances; refusing to mix")
    rows = []
    for s in summaries:
        rows.append({"method": s["method"], "objective": s["objective"],
                     "steps": s["steps"], "raw_mean": s["raw_mean"],
                     "normalized_mean": s["normalized_mean"],
                     "solve_time_mean": s["solve_time_mean"],
                     "instance_digest": s["instance_digest"][:12]})

    def key(r):
        v = r["normalized_mean"]
        v = math.inf if v is None else (-v if MAXIMIZE[r["objective"]] else v)
        return r["objective"], v

    return sorted(rows, key=key)
