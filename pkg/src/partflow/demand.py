"""Demand matrices: synthetic generators, noise injection, forecasting, trace files."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .topology import Topology

DEFAULT_WINDOW = 12
PREDICTORS = ("moving-average", "mean-value", "seasonal-naive", "linear-trend")


class DemandError(ValueError):
    pass


def check_demand_matrix(d, n: int | None = None) -> np.ndarray:
    """Validate and return a float copy of a square, nonnegative, zero-diagonal matrix."""
    d = np.array(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise DemandError(f"demand matrix must be square, got shape {d.shape}")
    if n is not None and d.shape[0] != n:
        raise DemandError(f"demand matrix is {d.shape[0]}x{d.shape[0]}, expected {n}x{n}")
    if not np.all(np.isfinite(d)):
        raise DemandError("demand matrix has non-finite entries")
    if np.any(d < 0):
        raise DemandError("demand matrix has negative entries")
    if np.any(np.diag(d) != 0):
        raise DemandError("demand matrix has a nonzero diagonal")
    return d


@dataclass
class DemandSeries:
    """Time-ordered stack of demand matrices, shape ``(T, n, n)``."""

    matrices: np.ndarray
    window: int = DEFAULT_WINDOW

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=np.float64)
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise DemandError(f"series must have shape (T, n, n), got {m.shape}")
        if self.window < 1:
            raise DemandError("window must be positive")
        self.matrices = m

    def __len__(self):
        return self.matrices.shape[0]

    @property
    def node_count(self) -> int:
        return self.matrices.shape[1]

    def history(self, t: int) -> np.ndarray:
        """The ``window`` matrices strictly before step ``t``."""
        if t < self.window or t > len(self):
            raise DemandError(
                f"step {t} has no full history window of {self.window}")
        return self.matrices[t - self.window:t]

    def split(self, ratios=(7, 1, 2)) -> tuple["DemandSeries", ...]:
        """Chronological split, e.g. train/validation/test at 7:1:2."""
        total = float(sum(ratios))
        bounds = np.floor(np.cumsum(ratios) / total * len(self)).astype(int)
        bounds[-1] = len(self)
        starts = np.concatenate([[0], bounds[:-1]])
        return tuple(DemandSeries(self.matrices[a:b], self.window)
                     for a, b in zip(starts, bounds))


def gen_gravity(t: Topology, scale: float = 1.0, seed=None) -> np.ndarray:
    """Gravity model: Gaussian around each pair's capacity-share fraction
    (std = fraction/4), truncated at zero and multiplied by ``scale``."""
    rng = np.random.default_rng(seed)
    out_cap = t.out_capacity()
    in_cap = t.in_capacity()
    norm = out_cap / out_cap.sum()
    denom = in_cap.sum() - in_cap
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = norm[:, None] * in_cap[None, :] / denom[:, None]
    frac[~np.isfinite(frac)] = 0.0
    np.fill_diagonal(frac, 0.0)
    draw = rng.normal(frac, frac / 4.0)
    return np.maximum(draw, 0.0) * scale


def gen_poisson(t: Topology, lam: float, decay: float, scale: float = 1.0,
                seed=None) -> np.ndarray:
    """Poisson demand with mean ``lam * decay**hops``; unreachable pairs get 0."""
    if not 0.0 <= decay <= 1.0:
        raise DemandError(f"decay must lie in [0, 1], got {decay}")
    rng = np.random.default_rng(seed)
    dist = t.hop_distances()
    reach = np.isfinite(dist)
    mean = np.zeros_like(dist)
    mean[reach] = lam * np.power(decay, dist[reach])
    np.fill_diagonal(mean, 0.0)
    return rng.poisson(mean).astype(np.float64) * scale


def gen_bimodal(t: Topology, p_high: float, low=(0.0, 1.0), high=(10.0, 20.0),
                seed=None) -> np.ndarray:
    """Each off-diagonal pair is high (Uniform(high)) with prob ``p_high``,
    otherwise low (Uniform(low))."""
    if not 0.0 <= p_high <= 1.0:
        raise DemandError(f"p_high must lie in [0, 1], got {p_high}")
    for lo, hi in (low, high):
        if lo > hi or lo < 0:
            raise DemandError(f"invalid interval [{lo}, {hi}]")
    rng = np.random.default_rng(seed)
    n = t.node_count
    is_high = rng.random((n, n)) < p_high
    a = np.where(is_high, rng.uniform(high[0], high[1], (n, n)),
                 rng.uniform(low[0], low[1], (n, n)))
    np.fill_diagonal(a, 0.0)
    return a


def inject_fluctuation(d, history, alpha: float, seed=None) -> np.ndarray:
    """Add ``alpha * N(0, sigma^2)`` per pair, sigma the population std of the
    pair over ``history``; clamp at zero."""
    d = np.asarray(d, dtype=np.float64)
    hist = history.matrices if isinstance(history, DemandSeries) else np.asarray(history, float)
    if hist.ndim != 3 or hist.shape[0] == 0:
        raise DemandError("fluctuation needs a nonempty history stack")
    if alpha == 0:
        return d.copy()
    sigma = hist.std(axis=0)
    rng = np.random.default_rng(seed)
    noisy = np.maximum(d + alpha * sigma * rng.standard_normal(d.shape), 0.0)
    np.fill_diagonal(noisy, 0.0)
    return noisy


def predict(series, method: str = "moving-average", window: int | None = None,
            season: int | None = None) -> np.ndarray:
    """Next-step forecast per pair from the last ``window`` observations.

    ``series`` may be a DemandSeries or a ``(T, n, n)`` array.
    """
    if isinstance(series, DemandSeries):
        window = window or series.window
        hist = series.matrices
    else:
        hist = np.asarray(series, dtype=np.float64)
    window = window or DEFAULT_WINDOW
    hist = hist[-window:]
    m = hist.shape[0]
    if method == "moving-average":
        if m < 1:
            raise DemandError("moving-average needs at least 1 observation")
        w = np.arange(1, m + 1, dtype=np.float64)
        return np.tensordot(w / w.sum(), hist, axes=1)
    if method == "mean-value":
        if m < 1:
            raise DemandError("mean-value needs at least 1 observation")
        return hist.mean(axis=0)
    if method == "seasonal-naive":
        season = season or window
        if m < season:
            raise DemandError(
                f"seasonal-naive needs {season} observations, got {m}")
        return hist[-season].copy()
    if method == "linear-trend":
        if m < 2:
            raise DemandError("linear-trend needs at least 2 observations")
        return np.maximum(2.0 * hist[-1] - hist[-2], 0.0)
    raise DemandError(f"unknown predictor {method!r}")


def normalize_series(series: DemandSeries, t: Topology) -> tuple[DemandSeries, float]:
    """Divide by ten times the largest link capacity; returns the divisor."""
    factor = 10.0 * t.c_max
    return DemandSeries(series.matrices / factor, series.window), factor


def denormalize_series(series: DemandSeries, factor: float) -> DemandSeries:
    return DemandSeries(series.matrices * factor, series.window)


def generate_series(t: Topology, model: str, count: int, seed: int = 0,
                    window: int = DEFAULT_WINDOW, **params) -> DemandSeries:
    """``count`` independent draws of one generator, step ``i`` seeded by ``(seed, i)``."""
    gens = {"gravity": gen_gravity, "poisson": gen_poisson, "bimodal": gen_bimodal}
    if model not in gens:
        raise DemandError(f"unknown demand model {model!r}")
    mats = [gens[model](t, seed=np.random.SeedSequence([seed, i]), **params)
            for i in range(count)]
    return DemandSeries(np.stack(mats), window)


def _pair_labels(n: int) -> list[tuple[int, int]]:
    return [(s, d) for s in range(n) for d in range(n) if s != d]


def write_trace(series: DemandSeries, path: Union[str, Path]) -> None:
    """CSV with header ``s:t`` labels and one row per step."""
    n = series.node_count
    labels = _pair_labels(n)
    src = [s for s, _ in labels]
    dst = [d for _, d in labels]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{s}:{d}" for s, d in labels])
        for m in series.matrices:
            w.writerow([repr(float(x)) for x in m[src, dst]])


def read_trace(path: Union[str, Path], window: int = DEFAULT_WINDOW) -> DemandSeries:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DemandError("empty trace file")
    header = rows[0]
    try:
        labels = [tuple(int(x) for x in h.split(":")) for h in header]
    except ValueError:
        raise DemandError("trace header must hold 's:t' labels") from None
    n = max(max(p) for p in labels) + 1
    if labels != _pair_labels(n):
        raise DemandError("trace columns must list every (s, t) pair in lexicographic order")
    src = [s for s, _ in labels]
    dst = [d for _, d in labels]
    mats = np.zeros((len(rows) - 1, n, n))
    for i, row in enumerate(rows[1:]):
        if len(row) != len(labels):
            raise DemandError(f"row {i + 2}: expected {len(labels)} values, got {len(row)}")
        mats[i, src, dst] = [float(x) for x in row]
    if np.any(mats < 0):
        raise DemandError("trace contains negative demand")
    return DemandSeries(mats, window)


def case_study_scenarios() -> list[tuple[np.ndarray, float]]:
    """Two equiprobable demand matrices for the four-node example:
    (D14, D24) is (3/2, 6/7) or (7/6, 3/2)."""
    out = []
    for d14, d24 in ((3 / 2, 6 / 7), (7 / 6, 3 / 2)):
        m = np.zeros((4, 4))
        m[0, 3] = d14
        m[1, 3] = d24
        out.append((m, 0.5))
    return out
