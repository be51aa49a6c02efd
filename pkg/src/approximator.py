"""Size-invariant policy/value network over upper-triangle lattice graphs.

A matrix of size N becomes a graph with one node per upper-triangle cell
(diagonal included) and edges between horizontally or vertically adjacent
cells. Each message-passing layer computes

    h_v' = MLP((1 + ε)·h_v + Σ_{u ∈ N(v)} h_u)

with a two-layer ReLU MLP. Every layer's node states are sum-pooled, the
pooled vectors (plus an optional context vector) are concatenated and fed
through one fully connected layer. The value head is ``tanh``; the policy
head produces a fixed number of logits that ``map_policy`` restricts to the
slots legal for the current size.

Gradients are written out by hand; ``loss_and_grads`` is what the
finite-difference tests check.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    CorruptFile,
    DimensionMismatch,
    EmptyTrainingData,
    MissingCheckpoint,
    NonFiniteLoss,
    SizeExceedsMax,
    VersionMismatch,
)
from .matrix_core import SymmetricMatrix, frobenius_norm, num_pivots, upper_values
from .mcts import SearchGame
from .models import ModelConfig
from .storage import write_json

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


# --- Graphs ---

@lru_cache(maxsize=64)
def lattice_edges(n: int) -> Tuple[Tuple[int, int], ...]:
    """Undirected lattice edges between upper-triangle cells, as node-index pairs."""
    index = {}
    rows, cols = np.triu_indices(n)
    for k, (i, j) in enumerate(zip(rows.tolist(), cols.tolist())):
        index[(i, j)] = k
    edges = []
    for (i, j), k in index.items():
        if (i, j + 1) in index:
            edges.append((k, index[(i, j + 1)]))
        if (i + 1, j) in index:
            edges.append((k, index[(i + 1, j)]))
    return tuple(edges)


@lru_cache(maxsize=64)
def lattice_adjacency(n: int) -> np.ndarray:
    size = n * (n + 1) // 2
    adj = np.zeros((size, size))
    for u, v in lattice_edges(n):
        adj[u, v] = adj[v, u] = 1.0
    adj.setflags(write=False)
    return adj


@dataclass(frozen=True, eq=False)
class LatticeGraph:
    """Upper triangle of a matrix as a lattice graph.

    ``features`` columns: value and ``|value|`` (both divided by ``‖M‖_F``),
    diagonal flag, band ``(q - p)/n``.
    """

    n: int
    node_values: np.ndarray
    edges: Tuple[Tuple[int, int], ...]
    features: np.ndarray
    adjacency: np.ndarray

    @property
    def num_nodes(self) -> int:
        return int(self.node_values.shape[0])

    def permuted(self, perm: Sequence[int]) -> "LatticeGraph":
        """Same graph with node ``perm[k]`` relabeled as ``k``."""
        perm = np.asarray(perm)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        edges = tuple((int(inverse[u]), int(inverse[v])) for u, v in self.edges)
        return LatticeGraph(
            n=self.n,
            node_values=self.node_values[perm],
            edges=edges,
            features=self.features[perm],
            adjacency=self.adjacency[np.ix_(perm, perm)],
        )


def node_features(values: np.ndarray, n: int, scale: float) -> np.ndarray:
    rows, cols = np.triu_indices(n)
    v = values / scale
    return np.stack([v, np.abs(v), (rows == cols).astype(np.float64), (cols - rows) / n], axis=1)


def build_graph(m: SymmetricMatrix) -> LatticeGraph:
    """Lattice graph with node values in ``upper_index`` order."""
    values = upper_values(m)
    scale = frobenius_norm(m) or 1.0
    return LatticeGraph(
        n=m.n,
        node_values=values,
        edges=lattice_edges(m.n),
        features=node_features(values, m.n, scale),
        adjacency=lattice_adjacency(m.n),
    )


# --- Parameters ---

@dataclass
class ModelParams:
    """Network configuration plus named weight arrays."""

    config: ModelConfig
    weights: Dict[str, np.ndarray]
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def num_layers(self) -> int:
        return self.config.num_layers

    @property
    def hidden_dim(self) -> int:
        return self.config.hidden_dim

    @property
    def n_max(self) -> int:
        return self.config.n_max

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: v.copy() for k, v in self.weights.items()},
            dict(self.metadata),
        )

    def trainable(self) -> List[str]:
        if self.config.learn_eps:
            return list(self.weights)
        return [k for k in self.weights if not k.endswith(".eps")]


def _is_decayed(name: str) -> bool:
    return name.endswith((".W1", ".W2", ".W", ".w"))


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """He-initialized weights, zero biases, small heads."""
    rng = np.random.Generator(np.random.Philox(seed))
    h = cfg.hidden_dim
    weights: Dict[str, np.ndarray] = {}
    d_in = cfg.feature_dim
    for k in range(cfg.num_layers):
        weights[f"gin{k}.W1"] = rng.normal(0.0, math.sqrt(2.0 / d_in), size=(d_in, h))
        weights[f"gin{k}.b1"] = np.zeros(h)
        weights[f"gin{k}.W2"] = rng.normal(0.0, math.sqrt(2.0 / h), size=(h, h))
        weights[f"gin{k}.b2"] = np.zeros(h)
        weights[f"gin{k}.eps"] = np.zeros(1)
        d_in = h
    concat = cfg.num_layers * h + cfg.context_dim
    weights["fc.W"] = rng.normal(0.0, math.sqrt(2.0 / concat), size=(concat, h))
    weights["fc.b"] = np.zeros(h)
    weights["value.w"] = rng.normal(0.0, 0.1 / math.sqrt(h), size=h)
    weights["value.b"] = np.zeros(1)
    weights["policy.W"] = rng.normal(0.0, 0.1 / math.sqrt(h), size=(h, cfg.policy_size))
    weights["policy.b"] = np.zeros(cfg.policy_size)
    return ModelParams(cfg, weights, {"seed": seed, "iteration": 0})


# --- Policy mapping ---

def legal_slot_count(n: int, cfg: ModelConfig) -> int:
    """Slots the policy may use for an ``n×n`` input."""
    if cfg.option_head:
        return cfg.policy_size
    if n > cfg.n_max:
        raise SizeExceedsMax(f"matrix size {n} exceeds n_max={cfg.n_max}")
    return num_pivots(n)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def map_policy(logits: np.ndarray, n: int, n_max: int) -> np.ndarray:
    """Softmax over the ``n(n-1)/2`` slots of an ``n×n`` matrix; other slots exactly 0.

    Smaller matrices use slots ``0..n(n-1)/2-1`` in their own row-major
    pivot order.
    """
    if n > n_max:
        raise SizeExceedsMax(f"matrix size {n} exceeds n_max={n_max}")
    logits = np.asarray(logits, dtype=np.float64)
    size = num_pivots(n_max)
    if logits.shape[-1] != size:
        raise DimensionMismatch(f"expected {size} logits for n_max={n_max}, got {logits.shape[-1]}")
    return _masked_softmax(logits, num_pivots(n))


def _masked_softmax(logits: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(logits)
    out[..., :k] = np.exp(_log_softmax(logits[..., :k]))
    return out


# --- Forward / backward ---

@dataclass
class ForwardOutput:
    policy: np.ndarray
    value: float
    logits: np.ndarray
    pooled: List[np.ndarray]


@dataclass
class _GroupCache:
    x: np.ndarray
    adj: np.ndarray
    layers: List[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, Optional[np.ndarray]]]
    pooled: List[np.ndarray]
    concat: np.ndarray
    zf: np.ndarray
    f: np.ndarray
    value: np.ndarray
    logits: np.ndarray
    legal: int


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _forward_group(
    params: ModelParams,
    x: np.ndarray,
    adj: np.ndarray,
    n: int,
    context: Optional[np.ndarray],
    train_mode: bool,
    rng: Optional[np.random.Generator],
) -> _GroupCache:
    """Forward pass for a batch of same-size graphs, ``x`` of shape ``(B, V, F)``."""
    cfg = params.config
    w = params.weights
    if x.shape[-1] != cfg.feature_dim:
        raise DimensionMismatch(f"expected {cfg.feature_dim} node features, got {x.shape[-1]}")
    if adj.shape != (x.shape[1], x.shape[1]):
        raise DimensionMismatch(f"adjacency {adj.shape} does not match {x.shape[1]} nodes")
    batch = x.shape[0]
    if cfg.context_dim:
        if context is None:
            context = np.zeros((batch, cfg.context_dim))
        if context.shape != (batch, cfg.context_dim):
            raise DimensionMismatch(f"context must be ({batch}, {cfg.context_dim}), got {context.shape}")
    legal = legal_slot_count(n, cfg)
    if train_mode and cfg.dropout_rate > 0 and rng is None:
        rng = np.random.default_rng(0)

    h = x
    layers = []
    pooled = []
    for k in range(cfg.num_layers):
        eps = float(w[f"gin{k}.eps"][0])
        agg = (1.0 + eps) * h + np.matmul(adj, h)
        z1 = agg @ w[f"gin{k}.W1"] + w[f"gin{k}.b1"]
        a1 = _relu(z1)
        z2 = a1 @ w[f"gin{k}.W2"] + w[f"gin{k}.b2"]
        out = _relu(z2)
        mask = None
        if train_mode and cfg.dropout_rate > 0:
            keep = 1.0 - cfg.dropout_rate
            mask = (rng.random(out.shape) < keep) / keep  # type: ignore[union-attr]
            out = out * mask
        layers.append((h, agg, z1, a1, z2, mask))
        pooled.append(out.sum(axis=1))
        h = out

    parts = pooled + ([context] if cfg.context_dim else [])
    concat = np.concatenate(parts, axis=1)
    zf = concat @ w["fc.W"] + w["fc.b"]
    f = _relu(zf)
    value = np.tanh(f @ w["value.w"] + w["value.b"][0])
    logits = f @ w["policy.W"] + w["policy.b"]
    return _GroupCache(x, adj, layers, pooled, concat, zf, f, value, logits, legal)


def forward(
    g: LatticeGraph,
    params: ModelParams,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
    context: Optional[np.ndarray] = None,
) -> ForwardOutput:
    """Policy vector and value for one graph; dropout only in ``train_mode``."""
    ctx = None if context is None else np.asarray(context, dtype=np.float64)[None, :]
    cache = _forward_group(params, g.features[None], g.adjacency, g.n, ctx, train_mode, rng)
    logits = cache.logits[0]
    if params.config.option_head:
        policy = _masked_softmax(logits, cache.legal)
    else:
        policy = map_policy(logits, g.n, params.config.n_max)
    return ForwardOutput(
        policy=policy,
        value=float(cache.value[0]),
        logits=cache.logits[0],
        pooled=[p[0] for p in cache.pooled],
    )


@dataclass
class TrainingSample:
    """One ``(state, π̃, z)`` example."""

    graph: LatticeGraph
    policy: np.ndarray
    value: float
    context: Optional[np.ndarray] = None

    @classmethod
    def from_matrix(
        cls,
        m: SymmetricMatrix,
        policy: np.ndarray,
        value: float,
        context: Optional[np.ndarray] = None,
    ) -> "TrainingSample":
        return cls(build_graph(m), np.asarray(policy, dtype=np.float64), float(value), context)


def _groups(samples: Sequence[TrainingSample]) -> Dict[int, List[TrainingSample]]:
    groups: Dict[int, List[TrainingSample]] = {}
    for s in samples:
        groups.setdefault(s.graph.n, []).append(s)
    return groups


def loss_and_grads(
    params: ModelParams,
    samples: Sequence[TrainingSample],
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean ``(v - z)² - Σ π·log p`` over the batch plus ``l2·Σ‖W‖²``, and its gradient."""
    if not samples:
        raise EmptyTrainingData("empty batch")
    cfg = params.config
    w = params.weights
    total = len(samples)
    grads = {k: np.zeros_like(v) for k, v in w.items()}
    loss = 0.0
    h = cfg.hidden_dim

    for n, group in sorted(_groups(samples).items()):
        x = np.stack([s.graph.features for s in group])
        adj = group[0].graph.adjacency
        ctx = None
        if cfg.context_dim:
            ctx = np.stack([
                s.context if s.context is not None else np.zeros(cfg.context_dim) for s in group
            ])
        c = _forward_group(params, x, adj, n, ctx, train_mode, rng)
        k = c.legal
        target_pi = np.stack([s.policy for s in group])
        if target_pi.shape[1] != cfg.policy_size:
            raise DimensionMismatch(f"policy targets must have {cfg.policy_size} slots, got {target_pi.shape[1]}")
        z = np.array([s.value for s in group])
        logp = _log_softmax(c.logits[:, :k])
        loss += float(np.sum((c.value - z) ** 2) - np.sum(target_pi[:, :k] * logp)) / total

        # value head
        dpre = 2.0 * (c.value - z) * (1.0 - c.value ** 2) / total
        grads["value.w"] += c.f.T @ dpre
        grads["value.b"] += dpre.sum()
        df = np.outer(dpre, w["value.w"])

        # policy head
        dlogits = np.zeros_like(c.logits)
        p = np.exp(logp)
        dlogits[:, :k] = (p * target_pi[:, :k].sum(axis=1, keepdims=True) - target_pi[:, :k]) / total
        grads["policy.W"] += c.f.T @ dlogits
        grads["policy.b"] += dlogits.sum(axis=0)
        df += dlogits @ w["policy.W"].T

        dzf = df * (c.zf > 0)
        grads["fc.W"] += c.concat.T @ dzf
        grads["fc.b"] += dzf.sum(axis=0)
        dconcat = dzf @ w["fc.W"].T

        dh_next = np.zeros_like(c.layers[-1][4])
        for layer in range(cfg.num_layers - 1, -1, -1):
            h_in, agg, z1, a1, z2, mask = c.layers[layer]
            dout = dconcat[:, None, layer * h:(layer + 1) * h] + dh_next
            if mask is not None:
                dout = dout * mask
            dz2 = dout * (z2 > 0)
            grads[f"gin{layer}.W2"] += a1.reshape(-1, h).T @ dz2.reshape(-1, h)
            grads[f"gin{layer}.b2"] += dz2.sum(axis=(0, 1))
            dz1 = (dz2 @ w[f"gin{layer}.W2"].T) * (z1 > 0)
            grads[f"gin{layer}.W1"] += agg.reshape(-1, agg.shape[-1]).T @ dz1.reshape(-1, h)
            grads[f"gin{layer}.b1"] += dz1.sum(axis=(0, 1))
            dagg = dz1 @ w[f"gin{layer}.W1"].T
            if cfg.learn_eps:
                grads[f"gin{layer}.eps"] += float(np.sum(dagg * h_in))
            eps = float(w[f"gin{layer}.eps"][0])
            dh_next = (1.0 + eps) * dagg + np.matmul(c.adj.T, dagg)

    if cfg.l2 > 0:
        for name, arr in w.items():
            if _is_decayed(name):
                loss += cfg.l2 * float(np.sum(arr * arr))
                grads[name] += 2.0 * cfg.l2 * arr
    if not cfg.learn_eps:
        for layer in range(cfg.num_layers):
            grads[f"gin{layer}.eps"][:] = 0.0
    return loss, grads


@dataclass
class OptimizerState:
    """Momentum buffers, one per trainable array."""

    velocity: Dict[str, np.ndarray] = field(default_factory=dict)


def train_step(
    params: ModelParams,
    batch: Sequence[TrainingSample],
    lr: float,
    rng: Optional[np.random.Generator] = None,
    optimizer: Optional[OptimizerState] = None,
) -> Tuple[ModelParams, float]:
    """One gradient-descent update; returns new params and the batch loss."""
    loss, grads = loss_and_grads(params, batch, train_mode=True, rng=rng)
    if not math.isfinite(loss):
        worst = max(float(np.max(np.abs(v))) for v in params.weights.values())
        raise NonFiniteLoss(f"loss is {loss} on a batch of {len(batch)} (max |w| = {worst:.3e})")
    new = params.copy()
    momentum = params.config.momentum
    for name in params.trainable():
        step = -lr * grads[name]
        if momentum > 0 and optimizer is not None:
            vel = optimizer.velocity.get(name)
            vel = step if vel is None else momentum * vel + step
            optimizer.velocity[name] = vel
            step = vel
        new.weights[name] = params.weights[name] + step
    return new, loss


def batch_loss(params: ModelParams, samples: Sequence[TrainingSample]) -> float:
    """Loss without dropout (for held-out evaluation)."""
    return loss_and_grads(params, samples, train_mode=False)[0]


# --- Checkpoints ---

def save_params(params: ModelParams, path: Path) -> None:
    """Write a JSON checkpoint (``format_version`` 1)."""
    payload = {
        "format_version": FORMAT_VERSION,
        "config": params.config.model_dump(),
        "n_max": params.n_max,
        "num_layers": params.num_layers,
        "hidden_dim": params.hidden_dim,
        "weights": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in params.weights.items()
        },
        "metadata": params.metadata,
    }
    write_json(path, payload)
    logger.info("checkpoint written to %s", path)


def load_params(path: Path) -> ModelParams:
    """Read a checkpoint written by ``save_params``."""
    if not path.exists():
        raise MissingCheckpoint(f"checkpoint not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CorruptFile(f"cannot parse checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CorruptFile(f"{path} is not a checkpoint")
    if payload["format_version"] != FORMAT_VERSION:
        raise VersionMismatch(
            f"{path} has format_version {payload['format_version']}, expected {FORMAT_VERSION}"
        )
    try:
        cfg = ModelConfig(**payload["config"])
        weights = {
            name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in payload["weights"].items()
        }
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptFile(f"malformed checkpoint {path}: {e}") from e
    params = ModelParams(cfg, weights, dict(payload.get("metadata", {})))
    expected = init_params(cfg, 0).weights
    for name, arr in expected.items():
        if name not in weights or weights[name].shape != arr.shape:
            raise CorruptFile(f"{path}: weight {name!r} missing or misshapen")
        if not np.all(np.isfinite(weights[name])):
            raise CorruptFile(f"{path}: weight {name!r} is not finite")
    return params


# --- Search integration ---

class NetworkEvaluator:
    """Leaf evaluator backed by a parameter snapshot."""

    def __init__(self, params: ModelParams) -> None:
        self.params = params

    def predict(self, game: SearchGame, state: Any) -> Tuple[np.ndarray, float]:
        """Slot policy and value for the player to move."""
        m = game.matrix(state)
        out = forward(build_graph(m), self.params, context=game.context(state))
        return out.policy, out.value

    def evaluate(self, game: SearchGame, state: Any) -> Tuple[np.ndarray, np.ndarray]:
        policy, value = self.predict(game, state)
        actions = game.legal_actions(state)
        priors = np.array([policy[game.action_slot(state, a)] for a in actions])
        total = priors.sum()
        if not total > 0:
            priors = np.full(len(actions), 1.0 / len(actions))
        else:
            priors = priors / total
        return priors, game.value_vector(state, value)
