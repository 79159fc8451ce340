"""Per-node graph features for the placement agent.

Column layout (F = 10)::

    0-2  kind one-hot (Space, Air, Ground)
    3    residual compute / capacity, net of this chain's tentative load
    4    residual memory / capacity, same
    5    residual bandwidth on incident links / largest incident capacity sum
    6    degree / max degree
    7    mean TAG persistence of incident links (0 for links predicted to vanish)
    8    node already hosts a VNF of this chain
    9    node hosts the previous VNF of this chain
"""

from __future__ import annotations

import numpy as np

from ..scenario import NodeKind
from ..substrate import to_mem, to_rate

KIND_COLUMN = {NodeKind.SPACE: 0, NodeKind.AIR: 1, NodeKind.GROUND: 2}


class GraphContext:
    """Chain-independent parts of the features for one placement problem."""

    def __init__(self, problem):
        led, snap = problem.ledger, problem.snapshot
        self.nodes = list(led.node_order)
        self.index = {n: i for i, n in enumerate(self.nodes)}
        n = len(self.nodes)
        self.up = np.array([snap.is_up(x) for x in self.nodes])
        base = np.zeros((n, 10))
        for i, node in enumerate(self.nodes):
            base[i, KIND_COLUMN[led.kinds[node]]] = 1.0
        adj = np.eye(n, dtype=bool)
        bw_res = np.zeros(n)
        bw_cap = np.zeros(n)
        for (a, b), link in snap.links.items():
            i, j = self.index[a], self.index[b]
            adj[i, j] = adj[j, i] = True
            r = led.link_residual.get((a, b), 0)
            c = led.link_capacity.get((a, b), 0)
            bw_res[i] += r
            bw_res[j] += r
            bw_cap[i] += c
            bw_cap[j] += c
        degree = adj.sum(axis=1) - 1
        base[:, 5] = bw_res / bw_cap.max() if bw_cap.max() > 0 else 0.0
        base[:, 6] = degree / degree.max() if degree.max() > 0 else 0.0
        if problem.tag is not None:
            pers = problem.tag.node_persistence(snap)
            base[:, 7] = [pers.get(x, 0.0) for x in self.nodes]
        self.base = base
        self.adjacency = adj
        self.compute_res = np.array([led.compute_residual[x] for x in self.nodes], dtype=float)
        self.compute_cap = np.array([led.compute_capacity[x] for x in self.nodes], dtype=float)
        self.memory_res = np.array([led.memory_residual[x] for x in self.nodes], dtype=float)
        self.memory_cap = np.array([led.memory_capacity[x] for x in self.nodes], dtype=float)


def step_features(ctx: GraphContext, request, vnf_index: int, hosts: dict):
    """Features and feasibility mask for placing ``vnf_index`` given already-chosen ``hosts``."""
    load_c = np.zeros(len(ctx.nodes))
    load_m = np.zeros(len(ctx.nodes))
    for i, node in hosts.items():
        j = ctx.index[node]
        load_c[j] += to_rate(request.vnfs[i][0])
        load_m[j] += to_mem(request.vnfs[i][1])
    res_c = ctx.compute_res - load_c
    res_m = ctx.memory_res - load_m
    x = ctx.base.copy()
    x[:, 3] = np.clip(res_c / ctx.compute_cap, 0.0, 1.0)
    x[:, 4] = np.clip(res_m / ctx.memory_cap, 0.0, 1.0)
    for node in hosts.values():
        x[ctx.index[node], 8] = 1.0
    prev = hosts.get(vnf_index - 1)
    if prev is not None:
        x[ctx.index[prev], 9] = 1.0
    c, m = request.vnfs[vnf_index]
    mask = ctx.up & (res_c >= to_rate(c)) & (res_m >= to_mem(m))
    return x, mask


def hops_per_step(embedding) -> list[int]:
    """Substrate hops charged to each VNF placement step (vlink i -> step i+1)."""
    req = embedding.request
    steps = [0] * len(req.vnfs)
    for i, h in enumerate(embedding.vlink_hops()):
        steps[i + 1] += h
    if "in" in embedding.paths:
        steps[0] += max(0, len(embedding.paths["in"]) - 1)
    if "out" in embedding.paths:
        steps[-1] += max(0, len(embedding.paths["out"]) - 1)
    return steps

