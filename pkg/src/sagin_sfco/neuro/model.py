"""Two-layer graph attention encoder with actor and critic heads, numpy float64.

Forward passes return a cache consumed by the matching backward pass; there
is no tape. Gradients are returned as dicts keyed like the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError

FEATURE_DIM = 10
HIDDEN = 64
LEAKY_SLOPE = 0.2
PARAM_ORDER = ("W1", "a1", "W2", "a2", "w_actor", "b_actor", "w_critic", "b_critic")


def param_shapes(feature_dim: int = FEATURE_DIM, hidden: int = HIDDEN) -> dict:
    return {
        "W1": (feature_dim, hidden),
        "a1": (2 * hidden,),
        "W2": (hidden, hidden),
        "a2": (2 * hidden,),
        "w_actor": (hidden,),
        "b_actor": (1,),
        "w_critic": (hidden,),
        "b_critic": (1,),
    }


class PolicyModel:
    """Parameter store; ``grads`` holds the paired accumulators."""

    def __init__(self, params: dict, feature_dim: int = FEATURE_DIM, hidden: int = HIDDEN):
        self.feature_dim = feature_dim
        self.hidden = hidden
        shapes = param_shapes(feature_dim, hidden)
        for k, shape in shapes.items():
            if k not in params or params[k].shape != shape:
                raise ShapeError(f"parameter {k} must have shape {shape}")
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in PARAM_ORDER}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    @classmethod
    def initialize(cls, seed: int = 0, feature_dim: int = FEATURE_DIM, hidden: int = HIDDEN) -> "PolicyModel":
        rng = np.random.default_rng(seed)

        def glorot(shape):
            fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], 1)
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=shape)

        shapes = param_shapes(feature_dim, hidden)
        params = {k: glorot(s) if k not in ("b_actor", "b_critic") else np.zeros(s) for k, s in shapes.items()}
        return cls(params, feature_dim, hidden)

    def copy(self) -> "PolicyModel":
        return PolicyModel({k: v.copy() for k, v in self.params.items()}, self.feature_dim, self.hidden)

    @property
    def parameter_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)


# -- GAT layer ----------------------------------------------------------------------


@dataclass
class _LayerCache:
    x: np.ndarray
    z: np.ndarray
    pre: np.ndarray  # attention logits before the leaky rectifier
    alpha: np.ndarray
    out: np.ndarray


def _check(features, adjacency, W):
    if features.ndim != 2 or features.shape[1] != W.shape[0]:
        raise ShapeError(f"features {features.shape} incompatible with weights {W.shape}")
    n = features.shape[0]
    if adjacency.shape != (n, n):
        raise ShapeError(f"adjacency {adjacency.shape} does not match {n} nodes")


def gat_layer_forward(x, adjacency, W, a):
    _check(x, adjacency, W)
    h = W.shape[1]
    z = x @ W
    pre = (z @ a[:h])[:, None] + (z @ a[h:])[None, :]
    e = np.where(pre > 0, pre, LEAKY_SLOPE * pre)
    e = np.where(adjacency, e, -np.inf)
    e = e - e.max(axis=1, keepdims=True)
    w = np.exp(e)
    alpha = w / w.sum(axis=1, keepdims=True)
    out = np.tanh(alpha @ z)
    return out, _LayerCache(x, z, pre, alpha, out)


def gat_layer_backward(d_out, cache: _LayerCache, adjacency, W, a):
    h = W.shape[1]
    d_m = d_out * (1.0 - cache.out ** 2)
    d_alpha = d_m @ cache.z.T
    d_z = cache.alpha.T @ d_m
    # row-wise softmax Jacobian; alpha is 0 off the neighbourhood
    d_e = cache.alpha * (d_alpha - (d_alpha * cache.alpha).sum(axis=1, keepdims=True))
    d_pre = np.where(cache.pre > 0, d_e, LEAKY_SLOPE * d_e)
    d_pre = np.where(adjacency, d_pre, 0.0)
    d_src = d_pre.sum(axis=1)
    d_dst = d_pre.sum(axis=0)
    d_z += np.outer(d_src, a[:h]) + np.outer(d_dst, a[h:])
    d_a = np.concatenate([cache.z.T @ d_src, cache.z.T @ d_dst])
    d_W = cache.x.T @ d_z
    d_x = d_z @ W.T
    return d_x, d_W, d_a


def gat_forward(features, adjacency, params):
    """Per-node embeddings (N x hidden). ``adjacency`` must include self-loops."""
    adjacency = np.asarray(adjacency, dtype=bool)
    if not np.all(np.diag(adjacency)):
        raise ShapeError("adjacency must include self-loops")
    h1, _ = gat_layer_forward(features, adjacency, params["W1"], params["a1"])
    h2, _ = gat_layer_forward(h1, adjacency, params["W2"], params["a2"])
    return h2


# -- full network -------------------------------------------------------------------


@dataclass
class ForwardCache:
    adjacency: np.ndarray
    l1: _LayerCache
    l2: _LayerCache
    scores: np.ndarray
    value: float


def forward(params, features, adjacency) -> ForwardCache:
    adjacency = np.asarray(adjacency, dtype=bool)
    h1, c1 = gat_layer_forward(features, adjacency, params["W1"], params["a1"])
    h2, c2 = gat_layer_forward(h1, adjacency, params["W2"], params["a2"])
    scores = h2 @ params["w_actor"] + params["b_actor"][0]
    value = float(h2.mean(axis=0) @ params["w_critic"] + params["b_critic"][0])
    return ForwardCache(adjacency, c1, c2, scores, value)


def backward(params, cache: ForwardCache, d_scores, d_value: float) -> dict:
    """Gradients of a scalar loss given its derivative w.r.t. actor scores and critic value."""
    h2 = cache.l2.out
    n = h2.shape[0]
    g = {}
    g["w_actor"] = h2.T @ d_scores
    g["b_actor"] = np.array([d_scores.sum()])
    g["w_critic"] = d_value * h2.mean(axis=0)
    g["b_critic"] = np.array([d_value])
    d_h2 = np.outer(d_scores, params["w_actor"]) + (d_value / n) * params["w_critic"][None, :]
    d_h1, g["W2"], g["a2"] = gat_layer_backward(d_h2, cache.l2, cache.adjacency, params["W2"], params["a2"])
    _, g["W1"], g["a1"] = gat_layer_backward(d_h1, cache.l1, cache.adjacency, params["W1"], params["a1"])
    return g


def masked_log_softmax(scores, mask):
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask excludes every action")
    z = np.where(mask, scores, -np.inf)
    z = z - z[mask].max()
    logz = np.log(np.exp(z).sum())
    return np.where(mask, z - logz, -np.inf)


def step_losses(cache: ForwardCache, mask, action: int, advantage: float, ret: float, entropy_coef: float):
    """Actor and critic losses for one transition and their score/value derivatives.

    actor  = -advantage * log pi(action) - entropy_coef * H(pi)
    critic = 0.5 * (ret - V)^2
    ``advantage`` is a constant (no gradient flows into it).
    """
    logp = masked_log_softmax(cache.scores, mask)
    p = np.where(mask, np.exp(logp), 0.0)
    plogp = np.where(mask, p * np.where(mask, logp, 0.0), 0.0)
    entropy = -plogp.sum()
    actor = -advantage * logp[action] - entropy_coef * entropy
    d_scores = advantage * p
    d_scores[action] -= advantage
    # d(-H)/dz_k = p_k (log p_k + H)
    d_scores += entropy_coef * np.where(mask, p * (np.where(mask, logp, 0.0) + entropy), 0.0)
    critic = 0.5 * (ret - cache.value) ** 2
    d_value = cache.value - ret
    return actor, critic, entropy, d_scores, d_value
