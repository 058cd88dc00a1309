"""Source-partitioned Gaussian policies trained with counterfactual REINFORCE.

Every source node is an agent that owns all of its outgoing commodities.
Agents share one parameter set: a small backbone followed by an affine mean
head with one output per (destination, path slot). Actions are Gaussian
around those means with a fixed standard deviation; deployment uses the mean.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .demand import DemandSeries
from .objectives import Allocation, ObjectiveError
from .paths import CatalogSlice, PathCatalog, restrict_to_source
from .topology import Topology

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MODES = ("pram", "mono")


class PolicyError(ValueError):
    pass


class NumericError(FloatingPointError):
    """Raised when an update would write non-finite parameters."""


# ---------------------------------------------------------------- backbones

class TanhMLP:
    """Two affine layers, each followed by tanh."""

    name = "tanh-mlp"

    def init(self, rng, in_dim: int, hidden: Sequence[int]) -> dict:
        h1, h2 = hidden
        return {
            "W1": rng.normal(0.0, 1.0 / math.sqrt(in_dim), (in_dim, h1)),
            "b1": np.zeros(h1),
            "W2": rng.normal(0.0, 1.0 / math.sqrt(h1), (h1, h2)),
            "b2": np.zeros(h2),
        }

    def forward(self, w: dict, X: np.ndarray):
        h1 = np.tanh(X @ w["W1"] + w["b1"])
        h2 = np.tanh(h1 @ w["W2"] + w["b2"])
        return h2, (X, h1, h2)

    def backward(self, w: dict, cache, dH: np.ndarray) -> dict:
        X, h1, h2 = cache
        dz2 = dH * (1.0 - h2 * h2)
        dh1 = dz2 @ w["W2"].T
        dz1 = dh1 * (1.0 - h1 * h1)
        return {"W2": h1.T @ dz2, "b2": dz2.sum(axis=0),
                "W1": X.T @ dz1, "b1": dz1.sum(axis=0)}

    def count(self, in_dim: int, hidden: Sequence[int]) -> int:
        h1, h2 = hidden
        return (in_dim + 1) * h1 + (h1 + 1) * h2


BACKBONES = {TanhMLP.name: TanhMLP()}


def register_backbone(backbone) -> None:
    """Make a backbone (``init``/``forward``/``backward``/``count``) selectable by name."""
    for attr in ("name", "init", "forward", "backward", "count"):
        if not hasattr(backbone, attr):
            raise PolicyError(f"backbone lacks {attr!r}")
    BACKBONES[backbone.name] = backbone


# ------------------------------------------------------------------- params

def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class PolicyParams:
    """Shared backbone and mean-head weights plus the fixed action std."""

    weights: dict
    sigma: float
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.sigma > 0:
            raise PolicyError(f"sigma must be positive, got {self.sigma}")
        for key in ("state_dim", "out_dim", "hidden", "backbone"):
            if key not in self.config:
                raise PolicyError(f"policy config is missing {key!r}")

    @property
    def backbone(self):
        return BACKBONES[self.config["backbone"]]

    @property
    def digest(self) -> str:
        return config_digest(self.config)

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.weights.values()))

    def copy(self) -> "PolicyParams":
        return PolicyParams({k: v.copy() for k, v in self.weights.items()},
                            self.sigma, dict(self.config))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights[k].ravel() for k in sorted(self.weights)])

    def with_flat(self, vec) -> "PolicyParams":
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.num_parameters():
            raise PolicyError(
                f"flat vector has {vec.size} entries, expected {self.num_parameters()}")
        out, pos = {}, 0
        for k in sorted(self.weights):
            a = self.weights[k]
            out[k] = vec[pos:pos + a.size].reshape(a.shape).copy()
            pos += a.size
        return PolicyParams(out, self.sigma, dict(self.config))

    def save(self, path: Union[str, Path]) -> None:
        meta = {"version": FORMAT_VERSION, "sigma": self.sigma,
                "config": self.config, "digest": self.digest}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta, default=str)),
                     **{f"w_{k}": v for k, v in self.weights.items()})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PolicyParams":
        with np.load(path, allow_pickle=False) as z:
            if "__meta__" not in z:
                raise PolicyError(f"{path}: not a policy file")
            meta = json.loads(str(z["__meta__"]))
            weights = {k[2:]: z[k].copy() for k in z.files if k.startswith("w_")}
        if meta.get("version") != FORMAT_VERSION:
            raise PolicyError(f"{path}: unsupported policy format version {meta.get('version')}")
        config = meta["config"]
        if isinstance(config.get("hidden"), list):
            config["hidden"] = list(config["hidden"])
        if config_digest(config) != meta["digest"]:
            raise PolicyError(f"{path}: config digest mismatch")
        return cls(weights, float(meta["sigma"]), config)


def init_params(state_dim: int, out_dim: int, hidden=(32, 32), sigma: float = 0.1,
                backbone: str = TanhMLP.name, seed=0, **extra) -> PolicyParams:
    """Random backbone, near-zero mean head (initial means are ~0)."""
    if backbone not in BACKBONES:
        raise PolicyError(f"unknown backbone {backbone!r}")
    rng = np.random.default_rng(seed)
    bb = BACKBONES[backbone]
    w = bb.init(rng, state_dim, hidden)
    width = int(hidden[-1])
    w["Wm"] = rng.normal(0.0, 0.01 / math.sqrt(width), (width, out_dim))
    w["bm"] = np.zeros(out_dim)
    config = {"state_dim": int(state_dim), "out_dim": int(out_dim),
              "hidden": [int(h) for h in hidden], "backbone": backbone, **extra}
    return PolicyParams(w, float(sigma), config)


# -------------------------------------------------------------- subproblems

@dataclass
class Subproblem:
    """One agent: its commodities, their catalog slots and its local state.

    ``source`` is -1 for the single monolithic agent.
    """

    source: int
    pairs: list
    slice: CatalogSlice
    head_ids: np.ndarray
    state: np.ndarray

    @property
    def path_ids(self) -> np.ndarray:
        return self.slice.path_ids

    @property
    def action_dim(self) -> int:
        return self.head_ids.size


def _active_mask(cat: PathCatalog, history: np.ndarray) -> np.ndarray:
    peak = history.max(axis=0)
    return np.array([peak[s, t] > 0 for s, t in cat.pairs], dtype=bool)


def _check_history(history, n: int) -> np.ndarray:
    h = np.asarray(history, dtype=float)
    if h.ndim == 2:
        h = h[None]
    if h.ndim != 3 or h.shape[1:] != (n, n):
        raise PolicyError(f"history must have shape (W, {n}, {n}), got {h.shape}")
    return h


def source_state(history: np.ndarray, s: int) -> np.ndarray:
    """One-hot source, the source's demand rows over the window, and their mean."""
    n = history.shape[1]
    onehot = np.zeros(n)
    onehot[s] = 1.0
    rows = history[:, s, :]
    return np.concatenate([onehot, rows.ravel(), rows.mean(axis=0)])


def state_dim(n: int, window: int, mode: str = "pram") -> int:
    return n * (window + 2) if mode == "pram" else n * n * (window + 1)


def head_dim(n: int, k: int, mode: str = "pram") -> int:
    return n * k if mode == "pram" else n * n * k


def partition_by_source(t: Topology, cat: PathCatalog, history) -> list[Subproblem]:
    """One subproblem per source with at least one commodity that has demand
    somewhere in ``history`` (a ``(W, n, n)`` stack)."""
    hist = _check_history(history, t.node_count)
    subs = []
    for s in range(t.node_count):
        sl = restrict_to_source(cat, s, demand=hist)
        if len(sl) == 0:
            continue
        pair_ids = sl.pair_ids
        dests = np.array([cat.pairs[i][1] for i in pair_ids])
        heads = (dests[:, None] * cat.k + np.arange(cat.k)).ravel()
        subs.append(Subproblem(s, [cat.pairs[i] for i in pair_ids], sl, heads,
                               source_state(hist, s)))
    return subs


def monolithic_subproblem(t: Topology, cat: PathCatalog, history) -> list[Subproblem]:
    """The whole problem as one agent seeing every pair's window."""
    n = t.node_count
    hist = _check_history(history, n)
    active = np.flatnonzero(_active_mask(cat, hist))
    if active.size == 0:
        return []
    path_ids = (active[:, None] * cat.k + np.arange(cat.k)).ravel()
    flat = np.array([cat.pairs[i][0] * n + cat.pairs[i][1] for i in active])
    heads = (flat[:, None] * cat.k + np.arange(cat.k)).ravel()
    edges = np.flatnonzero(cat.path_edge[path_ids].any(axis=0))
    state = np.concatenate([hist.ravel(), hist.mean(axis=0).ravel()])
    return [Subproblem(-1, [cat.pairs[i] for i in active],
                       CatalogSlice(-1, active, path_ids, edges), heads, state)]


def build_agents(params_or_mode, t, cat, history) -> list[Subproblem]:
    mode = params_or_mode.config.get("mode", "pram") if isinstance(
        params_or_mode, PolicyParams) else params_or_mode
    if mode not in MODES:
        raise PolicyError(f"unknown policy mode {mode!r}")
    return (partition_by_source if mode == "pram" else monolithic_subproblem)(t, cat, history)


# ------------------------------------------------------------ forward/back

def _forward(params: PolicyParams, X: np.ndarray):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != params.config["state_dim"]:
        raise PolicyError(
            f"state has {X.shape[1]} features, policy expects {params.config['state_dim']}")
    H, cache = params.backbone.forward(params.weights, X)
    return H @ params.weights["Wm"] + params.weights["bm"], (cache, H)


def _backward(params: PolicyParams, caches, dMu: np.ndarray) -> dict:
    cache, H = caches
    w = params.weights
    grads = {"Wm": H.T @ dMu, "bm": dMu.sum(axis=0)}
    grads.update(params.backbone.backward(w, cache, dMu @ w["Wm"].T))
    return grads


def policy_forward(params: PolicyParams, sub) -> np.ndarray:
    """Per-path action means for one subproblem (or a raw state with all heads)."""
    if isinstance(sub, Subproblem):
        mu, _ = _forward(params, sub.state)
        return mu[0, sub.head_ids]
    mu, _ = _forward(params, sub)
    return mu[0]


def log_prob(action, mean, sigma: float) -> float:
    a = np.asarray(action, float)
    m = np.asarray(mean, float)
    return float(-0.5 * np.sum(np.log(2 * np.pi * sigma * sigma) + (a - m) ** 2 / (sigma * sigma)))


def sample_action(mean, sigma: float, rng=None, deterministic: bool = False):
    """``(a, log_prob(a))`` with ``a ~ N(mean, sigma^2)``; the mode when deterministic."""
    if not sigma > 0:
        raise PolicyError("sigma must be positive")
    mean = np.asarray(mean, float)
    if deterministic:
        a = mean.copy()
    else:
        rng = np.random.default_rng(rng)
        a = mean + sigma * rng.standard_normal(mean.shape)
    return a, log_prob(a, mean, sigma)


def log_prob_grad(params: PolicyParams, state, action, head_ids=None) -> dict:
    """Gradient of ``log pi(action | state)`` with respect to every weight."""
    mu, caches = _forward(params, state)
    heads = np.arange(mu.shape[1]) if head_ids is None else np.asarray(head_ids)
    dMu = np.zeros_like(mu)
    dMu[0, heads] = (np.asarray(action, float) - mu[0, heads]) / params.sigma ** 2
    return _backward(params, caches, dMu)


def mean_jacobian(params: PolicyParams, state, head_ids=None) -> np.ndarray:
    """``d mu[heads] / d theta`` as a ``(len(heads), num_parameters)`` matrix,
    columns ordered like :meth:`PolicyParams.flat`."""
    mu, caches = _forward(params, state)
    heads = np.arange(mu.shape[1]) if head_ids is None else np.asarray(head_ids)
    rows = []
    for h in heads:
        dMu = np.zeros_like(mu)
        dMu[0, h] = 1.0
        g = _backward(params, caches, dMu)
        rows.append(np.concatenate([g[k].ravel() for k in sorted(g)]))
    return np.array(rows)


# ------------------------------------------------------------------ decoding

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decode_action(a, objective: str, scale: float = 1.0) -> np.ndarray:
    """Logistic split weights for MLU, rectified planned flows otherwise."""
    a = np.asarray(a, float)
    if objective == "mlu":
        return _sigmoid(a)
    if objective in ("mtf", "mcf"):
        return np.maximum(a, 0.0) * scale
    raise ObjectiveError(f"unknown objective {objective!r}")


class JointLayout:
    """Where each agent's action block lands in the catalog path vector."""

    def __init__(self, cat: PathCatalog, agents: Sequence[Subproblem]):
        self.cat = cat
        self.sizes = [a.action_dim for a in agents]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        self.path_ids = (np.concatenate([a.path_ids for a in agents])
                         if agents else np.zeros(0, int))

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])

    def block(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])

    def to_catalog(self, A: np.ndarray, objective: str, scale: float = 1.0) -> np.ndarray:
        """Decode joint actions ``(B, dim)`` into catalog vectors ``(B, P)``."""
        A = np.atleast_2d(A)
        if objective == "mlu":
            out = np.ones((A.shape[0], self.cat.num_paths))
        else:
            out = np.zeros((A.shape[0], self.cat.num_paths))
        out[:, self.path_ids] = decode_action(A, objective, scale)
        return out


def batch_rewards(V: np.ndarray, dem: np.ndarray, cat: PathCatalog, t: Topology,
                  objective: str) -> np.ndarray:
    """Sign-adjusted objective (larger is better) for each row of catalog
    vectors ``V`` against pair demand ``dem``."""
    B = V.shape[0]
    k = cat.k
    if objective == "mlu":
        W = V.reshape(B, cat.num_pairs, k)
        tot = W.sum(axis=2, keepdims=True)
        W = W / np.where(tot > 0, tot, 1.0)
        flows = W.reshape(B, -1) * np.repeat(dem, k)
        if t.num_edges == 0:
            return np.zeros(B)
        return -np.max(flows @ cat.path_edge / t.capacities, axis=1)
    load = V @ cat.path_edge
    gamma = np.maximum(np.max(load / t.capacities, axis=1), 1.0) if t.num_edges else np.ones(B)
    sent = (V / gamma[:, None]).reshape(B, cat.num_pairs, k).sum(axis=2)
    got = np.minimum(sent, dem)
    if objective == "mtf":
        return got.sum(axis=1)
    pos = dem > 0
    if not pos.any():
        return np.ones(B)
    return np.min(got[:, pos] / dem[pos], axis=1)


def counterfactual_advantage(means: Sequence, actions: Sequence, reward_fn: Callable,
                             sigma: float, n_samples: int = 8, rng=None,
                             counterfactual: Optional[Sequence] = None):
    """Per-agent ``A_i = R(a) - mean_j R(a_-i, a_i^(j))``.

    ``reward_fn`` maps a ``(B, dim)`` stack of joint actions to ``B`` rewards.
    Counterfactual draws come from ``N(mean_i, sigma^2)`` unless explicit
    ``counterfactual[i]`` arrays of shape ``(n_samples, dim_i)`` are supplied.
    Returns ``(advantages, R(a))``.
    """
    if n_samples < 1:
        raise PolicyError("n_samples must be at least 1")
    sizes = [np.asarray(a).size for a in actions]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    joint = np.concatenate([np.asarray(a, float).ravel() for a in actions]) if sizes else np.zeros(0)
    m = len(actions)
    stack = np.repeat(joint[None], 1 + m * n_samples, axis=0)
    if counterfactual is None:
        rng = np.random.default_rng(rng)
    for i in range(m):
        rows = slice(1 + i * n_samples, 1 + (i + 1) * n_samples)
        cols = slice(offsets[i], offsets[i + 1])
        if counterfactual is not None:
            stack[rows, cols] = np.asarray(counterfactual[i], float).reshape(n_samples, sizes[i])
        else:
            stack[rows, cols] = np.asarray(means[i], float) + sigma * rng.standard_normal(
                (n_samples, sizes[i]))
    r = np.asarray(reward_fn(stack), float)
    base = r[1:].reshape(m, n_samples).mean(axis=1) if m else np.zeros(0)
    return r[0] - base, float(r[0])


# ------------------------------------------------------------------ updates

@dataclass
class Transition:
    """One joint decision: stacked agent states, head ids, actions, advantages."""

    states: np.ndarray
    head_ids: list
    actions: list
    advantages: np.ndarray


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def direction(self, grads: dict) -> dict:
        self.t += 1
        out = {}
        for k, g in grads.items():
            m = self.m.get(k, 0.0) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(k, 0.0) * self.beta2 + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            mh = m / (1 - self.beta1 ** self.t)
            vh = v / (1 - self.beta2 ** self.t)
            out[k] = mh / (np.sqrt(vh) + self.eps)
        return out


def policy_gradient(params: PolicyParams, batch: Sequence[Transition]) -> dict:
    """Batch mean of ``sum_i A_i grad log pi(a_i | s_i)``."""
    total = {k: np.zeros_like(v) for k, v in params.weights.items()}
    s2 = params.sigma ** 2
    for tr in batch:
        mu, caches = _forward(params, tr.states)
        dMu = np.zeros_like(mu)
        for i, heads in enumerate(tr.head_ids):
            dMu[i, heads] = tr.advantages[i] * (np.asarray(tr.actions[i]) - mu[i, heads]) / s2
        for k, g in _backward(params, caches, dMu).items():
            total[k] += g
    n = max(len(batch), 1)
    return {k: v / n for k, v in total.items()}


def reinforce_update(params: PolicyParams, batch: Sequence[Transition], lr: float,
                     optimizer: Optional[Adam] = None) -> PolicyParams:
    """Gradient-ascent step ``theta + lr * g_hat`` (or an Adam-scaled step)."""
    if lr < 0:
        raise PolicyError("learning rate must be nonnegative")
    for tr in batch:
        if not np.all(np.isfinite(tr.advantages)):
            raise NumericError("non-finite advantage in batch")
    grads = policy_gradient(params, batch)
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NumericError(f"non-finite policy gradient in {', '.join(sorted(bad))}")
    step = optimizer.direction(grads) if optimizer is not None else grads
    out = params.copy()
    for k in out.weights:
        out.weights[k] = out.weights[k] + lr * step[k]
    return out


# ------------------------------------------------------------------ training

@dataclass
class TrainConfig:
    lr: float = 1e-2
    lr_decay: float = 0.0
    epochs: int = 10
    batch: int = 4
    n_samples: int = 8
    sigma: float = 0.1
    patience: int = 3
    hidden: tuple = (32, 32)
    window: int = 12
    seed: int = 0
    optimizer: str = "adam"
    mode: str = "pram"
    max_updates: Optional[int] = None
    backbone: str = TanhMLP.name

    def __post_init__(self):
        if self.lr < 0:
            raise PolicyError("lr must be nonnegative")
        if self.epochs < 1 or self.batch < 1 or self.n_samples < 1:
            raise PolicyError("epochs, batch and n_samples must be positive")
        if not self.sigma > 0:
            raise PolicyError("sigma must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise PolicyError(f"unknown optimizer {self.optimizer!r}")
        if self.mode not in MODES:
            raise PolicyError(f"unknown mode {self.mode!r}")
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class CurveRow:
    epoch: int
    updates: int
    train_objective: float
    val_objective: float


def write_curve(rows: Sequence[CurveRow], path: Union[str, Path], digest: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if digest:
            fh.write(f"# config-digest: {digest}\n")
        w.writerow(["epoch", "updates", "train_objective", "val_objective"])
        for r in rows:
            w.writerow([r.epoch, r.updates, repr(r.train_objective), repr(r.val_objective)])


def mono_hidden(n: int, k: int, window: int, target: int) -> int:
    """Width ``h`` (both layers) of the monolithic network whose parameter
    count is closest to ``target``."""
    din, dout = state_dim(n, window, "mono"), head_dim(n, k, "mono")
    # (din+1)h + (h+1)h + (h+1)dout = h^2 + (din+dout+2)h + dout
    b = din + dout + 2
    root = (-b + math.sqrt(b * b + 4 * max(target - dout, 0))) / 2
    best = max(1, int(round(root)))
    cands = {max(1, best - 1), best, best + 1}
    return min(cands, key=lambda h: abs(h * h + b * h + dout - target))


def new_policy(t: Topology, cat: PathCatalog, objective: str, cfg: TrainConfig,
               scale: float) -> PolicyParams:
    n, k = t.node_count, cat.k
    hidden = cfg.hidden
    if cfg.mode == "mono":
        pram = BACKBONES[cfg.backbone].count(state_dim(n, cfg.window), hidden) + \
            (hidden[-1] + 1) * head_dim(n, k)
        h = mono_hidden(n, k, cfg.window, pram)
        hidden = (h, h)
    return init_params(state_dim(n, cfg.window, cfg.mode), head_dim(n, k, cfg.mode),
                       hidden, cfg.sigma, cfg.backbone, seed=cfg.seed,
                       mode=cfg.mode, objective=objective, n=n, k=k,
                       window=cfg.window, scale=float(scale))


def allocate(params: PolicyParams, t: Topology, cat: PathCatalog, history) -> Allocation:
    """Deployment allocation (action means) for the step after ``history``,
    given in raw demand units."""
    scale = params.config["scale"]
    objective = params.config["objective"]
    hist = _check_history(history, t.node_count) / scale
    agents = build_agents(params, t, cat, hist)
    layout = JointLayout(cat, agents)
    if agents:
        mu, _ = _forward(params, np.stack([a.state for a in agents]))
        joint = np.concatenate([mu[i, a.head_ids] for i, a in enumerate(agents)])
    else:
        joint = np.zeros(0)
    v = layout.to_catalog(joint, objective, scale)[0]
    if objective == "mlu":
        v = v.reshape(cat.num_pairs, cat.k)
        v = (v / v.sum(axis=1, keepdims=True)).ravel()
        return Allocation("weights", v)
    return Allocation("flows", v)


def _stream(seed: int, *keys: int):
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def _deploy_value(params, t, cat, series: np.ndarray, window: int, objective) -> float:
    """Mean raw objective of deployment allocations over ``series``."""
    from .objectives import evaluate
    vals = [evaluate(objective, allocate(params, t, cat, series[i - window:i]),
                     series[i], cat, t) for i in range(window, series.shape[0])]
    return float(np.mean(vals)) if vals else float("nan")


def train(t: Topology, cat: PathCatalog, series, objective: str,
          cfg: TrainConfig = None, validation=None, init: PolicyParams = None,
          reward_sign: float = 1.0):
    """Fine-tune a shared policy on consecutive (history, next-matrix) samples.

    Rewards are computed in normalized demand units (divided by ten times the
    largest capacity) with MLU negated. Early stopping watches the validation
    objective (or the training objective without validation data) and the
    best-scoring parameters are returned with the per-epoch learning curve.
    ``reward_sign=-1`` flips the reward, which should make things worse.
    """
    cfg = cfg or TrainConfig()
    mats = series.matrices if isinstance(series, DemandSeries) else np.asarray(series, float)
    if mats.shape[0] < cfg.window + 1:
        raise PolicyError(
            f"series has {mats.shape[0]} steps, need at least window+1 = {cfg.window + 1}")
    if objective not in ("mlu", "mtf", "mcf"):
        raise ObjectiveError(f"unknown objective {objective!r}")
    scale = 10.0 * t.c_max
    norm = mats / scale
    params = init.copy() if init is not None else new_policy(t, cat, objective, cfg, scale)
    val = None
    if validation is not None:
        val = validation.matrices if isinstance(validation, DemandSeries) else np.asarray(validation, float)
        if val.shape[0] <= cfg.window:
            val = None
    opt = Adam() if cfg.optimizer == "adam" else None
    maximize = objective != "mlu"
    rng = np.random.default_rng(cfg.seed)
    steps = np.arange(cfg.window, norm.shape[0])
    curve: list[CurveRow] = []
    best_score, best_params, stale, updates, sample_no = -np.inf, params.copy(), 0, 0, 0

    for epoch in range(1, cfg.epochs + 1):
        batch, seen = [], []
        for tau in rng.permutation(steps):
            if cfg.max_updates is not None and updates >= cfg.max_updates:
                break
            hist = norm[tau - cfg.window:tau]
            agents = build_agents(params, t, cat, hist)
            if not agents:
                continue
            layout = JointLayout(cat, agents)
            dem = cat.pair_demand(norm[tau])
            X = np.stack([a.state for a in agents])
            mu, _ = _forward(params, X)
            means = [mu[i, a.head_ids] for i, a in enumerate(agents)]
            actions = [m + cfg.sigma * _stream(cfg.seed, sample_no, i).standard_normal(m.shape)
                       for i, m in enumerate(means)]

            def reward_fn(A, layout=layout, dem=dem):
                return reward_sign * batch_rewards(layout.to_catalog(A, objective, 1.0),
                                                   dem, cat, t, objective)

            adv, r0 = counterfactual_advantage(
                means, actions, reward_fn, cfg.sigma, cfg.n_samples,
                rng=_stream(cfg.seed, sample_no, len(agents)))
            sample_no += 1
            raw = reward_sign * r0
            seen.append((-raw if objective == "mlu" else raw) * (scale if objective != "mcf" else 1.0))
            batch.append(Transition(X, [a.head_ids for a in agents], actions, adv))
            if len(batch) == cfg.batch:
                lr = cfg.lr / (1.0 + cfg.lr_decay * updates)
                params = reinforce_update(params, batch, lr, opt)
                updates += 1
                batch = []
        if batch and (cfg.max_updates is None or updates < cfg.max_updates):
            params = reinforce_update(params, batch, cfg.lr / (1.0 + cfg.lr_decay * updates), opt)
            updates += 1
        train_obj = float(np.mean(seen)) if seen else float("nan")
        val_obj = (_deploy_value(params, t, cat, val, cfg.window, objective)
                   if val is not None else train_obj)
        curve.append(CurveRow(epoch, updates, train_obj, val_obj))
        log.info("epoch %d: updates=%d train=%.6g val=%.6g", epoch, updates, train_obj, val_obj)
        score = val_obj if maximize else -val_obj
        if score > best_score + 1e-12:
            best_score, best_params, stale = score, params.copy(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
        if cfg.max_updates is not None and updates >= cfg.max_updates:
            break
    return best_params, curve


# ------------------------------------------------------------------ failures

def rescale_on_failure(a, failed, cat: PathCatalog, t: Topology = None):
    """Zero paths that cross a failed edge and renormalize survivors per pair.

    ``failed`` holds edge ids or, when ``t`` is given, ``(u, v)`` tuples.
    Exact inputs (e.g. :class:`fractions.Fraction` objects) stay exact.
    Returns ``(Allocation, disconnected_pair_ids)``; disconnected pairs get all
    zero weights. A pair whose surviving paths all carry zero weight is spread
    uniformly over them.
    """
    values = a.values if isinstance(a, Allocation) else np.asarray(a)
    if isinstance(a, Allocation) and a.mode != "weights":
        raise ObjectiveError("failure rescaling applies to weight allocations")
    if values.shape != (cat.num_paths,):
        raise ObjectiveError(f"allocation has {values.size} entries, catalog has {cat.num_paths}")
    ids = []
    for f in failed:
        if isinstance(f, tuple):
            if t is None:
                raise PolicyError("edge tuples need the topology")
            ids.append(t.edge_index()[f])
        else:
            ids.append(int(f))
    dead = cat.path_edge[:, ids].any(axis=1) if ids else np.zeros(cat.num_paths, bool)
    dead |= ~cat.alive
    exact = values.dtype == object
    zero = Fraction(0) if exact else 0.0
    w = values.copy() if exact else values.astype(float).copy()
    w[dead] = zero
    blocks = w.reshape(cat.num_pairs, cat.k)
    alive = (~dead).reshape(cat.num_pairs, cat.k)
    disconnected = []
    for i in range(cat.num_pairs):
        if not alive[i].any():
            disconnected.append(i)
            blocks[i] = zero
            continue
        total = sum(blocks[i]) if exact else blocks[i].sum()
        if total == 0:
            share = Fraction(1, int(alive[i].sum())) if exact else 1.0 / alive[i].sum()
            blocks[i] = np.where(alive[i], share, zero)
        else:
            blocks[i] = blocks[i] / total
    return Allocation("weights", blocks.reshape(-1)), disconnected
