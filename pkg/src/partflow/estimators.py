"""scikit-learn style wrappers around the functional allocators.

``fit`` takes a demand series (``(T, n, n)`` array or :class:`DemandSeries`),
``predict`` takes a history window and returns an :class:`Allocation`.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .demand import DEFAULT_WINDOW, PREDICTORS, DemandError, DemandSeries, predict
from .exact import allocation_value, lp_weights_mlu, solve_objective
from .objectives import OBJECTIVES, Allocation
from .paths import PathCatalog
from .policy import PolicyParams, TrainConfig, allocate, train
from .topology import Topology


def check_series(X, n: int | None = None, min_len: int = 1) -> np.ndarray:
    """Validate a demand stack: finite, nonnegative, square, zero diagonal."""
    m = X.matrices if isinstance(X, DemandSeries) else np.asarray(X, dtype=np.float64)
    if m.ndim == 2:
        m = m[None]
    if m.ndim != 3 or m.shape[1] != m.shape[2]:
        raise DemandError(f"expected a (T, n, n) demand stack, got shape {m.shape}")
    if n is not None and m.shape[1] != n:
        raise DemandError(f"demand stack is over {m.shape[1]} nodes, topology has {n}")
    if m.shape[0] < min_len:
        raise DemandError(f"need at least {min_len} demand matrices, got {m.shape[0]}")
    if not np.all(np.isfinite(m)) or np.any(m < 0):
        raise DemandError("demand must be finite and nonnegative")
    if np.any(np.einsum("tii->ti", m) != 0):
        raise DemandError("demand matrices must have a zero diagonal")
    return m


def _check_objective(objective: str) -> None:
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")


class _AllocatorMixin:
    def score(self, X, y):
        """Mean sign-adjusted objective (higher is better) of ``predict(X[i])``
        on the realized matrices ``y[i]``."""
        vals = [allocation_value(self.objective, self.predict(h), d, self.catalog, self.topology)
                for h, d in zip(X, y)]
        m = float(np.mean(vals))
        return -m if self.objective == "mlu" else m


class DemandForecaster(BaseEstimator):
    """Next-step demand predictor over a sliding window."""

    def __init__(self, method: str = "moving-average", window: int = DEFAULT_WINDOW,
                 season: int | None = None):
        self.method = method
        self.window = window
        self.season = season

    def fit(self, X, y=None):
        if self.method not in PREDICTORS:
            raise ValueError(f"method must be one of {PREDICTORS}, got {self.method!r}")
        m = check_series(X)
        self.n_nodes_ = m.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "n_nodes_")
        m = check_series(X, self.n_nodes_)
        return predict(m, self.method, self.window, self.season)


class LPAllocator(_AllocatorMixin, BaseEstimator):
    """Solve the exact LP on a forecast of the next matrix.

    ``weights=True`` uses the split-weight LP (MLU only).
    """

    def __init__(self, topology: Topology = None, catalog: PathCatalog = None,
                 objective: str = "mlu", forecaster: DemandForecaster | None = None,
                 weights: bool = False):
        self.topology = topology
        self.catalog = catalog
        self.objective = objective
        self.forecaster = forecaster
        self.weights = weights

    def fit(self, X=None, y=None):
        _check_objective(self.objective)
        if self.weights and self.objective != "mlu":
            raise ValueError("the split-weight LP is only defined for mlu")
        if self.topology is None or self.catalog is None:
            raise ValueError("topology and catalog are required")
        self.forecaster_ = (self.forecaster or DemandForecaster()).fit(
            X if X is not None else np.zeros((1, self.topology.node_count, self.topology.node_count)))
        return self

    def predict(self, X) -> Allocation:
        check_is_fitted(self, "forecaster_")
        d = self.forecaster_.predict(X)
        if self.weights:
            return lp_weights_mlu(self.topology, self.catalog, d)[0]
        return solve_objective(self.objective, self.topology, self.catalog, d)[0]


class PramAllocator(_AllocatorMixin, BaseEstimator):
    """Shared-parameter multi-agent policy, one agent per source node.

    ``mode="mono"`` trains a single unpartitioned agent with a matched
    parameter budget instead.
    """

    def __init__(self, topology: Topology = None, catalog: PathCatalog = None,
                 objective: str = "mlu", lr: float = 1e-2, lr_decay: float = 0.0,
                 epochs: int = 10, batch: int = 4, n_samples: int = 8,
                 sigma: float = 0.1, patience: int = 3, hidden=(32, 32),
                 window: int = DEFAULT_WINDOW, mode: str = "pram", seed: int = 0):
        self.topology = topology
        self.catalog = catalog
        self.objective = objective
        self.lr = lr
        self.lr_decay = lr_decay
        self.epochs = epochs
        self.batch = batch
        self.n_samples = n_samples
        self.sigma = sigma
        self.patience = patience
        self.hidden = hidden
        self.window = window
        self.mode = mode
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, lr_decay=self.lr_decay, epochs=self.epochs,
                           batch=self.batch, n_samples=self.n_samples, sigma=self.sigma,
                           patience=self.patience, hidden=tuple(self.hidden),
                           window=self.window, mode=self.mode, seed=self.seed)

    def fit(self, X, y=None):
        """Train on series ``X``; ``y`` is an optional validation series."""
        _check_objective(self.objective)
        if self.topology is None or self.catalog is None:
            raise ValueError("topology and catalog are required")
        n = self.topology.node_count
        m = check_series(X, n, self.window + 1)
        val = check_series(y, n) if y is not None else None
        self.params_, self.curve_ = train(self.topology, self.catalog, m, self.objective,
                                          self._train_config(), validation=val)
        return self

    def predict(self, X) -> Allocation:
        check_is_fitted(self, "params_")
        m = check_series(X, self.topology.node_count)
        return allocate(self.params_, self.topology, self.catalog, m[-self.window:])

    @classmethod
    def from_params(cls, params: PolicyParams, topology: Topology, catalog: PathCatalog):
        cfg = params.config
        est = cls(topology, catalog, objective=cfg["objective"], sigma=params.sigma,
                  hidden=tuple(cfg["hidden"]), window=cfg["window"], mode=cfg["mode"])
        est.params_ = params
        est.curve_ = []
        return est
