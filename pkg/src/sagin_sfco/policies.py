"""Placement policies sharing one decision interface.

Every policy exposes ``place(problem) -> PlacementDecision``. VNFs pinned in
``problem.fixed`` (used during migration) are never moved; their demands
count against node residuals before the free VNFs are placed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .geokinetics import TagFeatures, TopologySnapshot
from .scenario import SfcRequest
from .substrate import SubstrateLedger, segments_for, to_mem, to_rate


@dataclass(frozen=True)
class PlacementProblem:
    request: SfcRequest
    snapshot: TopologySnapshot
    ledger: SubstrateLedger  # read-only by contract
    tag: TagFeatures | None = None
    predicted: TopologySnapshot | None = None
    fixed: dict = field(default_factory=dict)  # vnf index -> node id
    purpose: str = "arrival"  # or "migration"

    @property
    def free_indices(self) -> list[int]:
        return [i for i in range(len(self.request.vnfs)) if i not in self.fixed]


@dataclass(frozen=True)
class PlacementDecision:
    assignment: tuple[str, ...] | None

    @property
    def rejected(self) -> bool:
        return self.assignment is None

    @classmethod
    def reject(cls) -> "PlacementDecision":
        return cls(None)


def pinned_load(problem: PlacementProblem) -> dict:
    load: dict = {}
    for i, node in problem.fixed.items():
        c, m = problem.request.vnfs[i]
        rc, rm = load.get(node, (0, 0))
        load[node] = (rc + to_rate(c), rm + to_mem(m))
    return load


def feasible_nodes(problem: PlacementProblem, vnf_index: int, tentative: dict | None = None) -> list[str]:
    """Up nodes whose residual compute and memory, net of ``tentative`` load, cover the VNF."""
    c, m = problem.request.vnfs[vnf_index]
    c, m = to_rate(c), to_mem(m)
    led, snap = problem.ledger, problem.snapshot
    tentative = tentative or {}
    out = []
    for n in led.node_order:
        if not snap.is_up(n):
            continue
        tc, tm = tentative.get(n, (0, 0))
        if led.compute_residual[n] - tc >= c and led.memory_residual[n] - tm >= m:
            out.append(n)
    return out


def _add_load(tentative: dict, node: str, vnf) -> None:
    rc, rm = tentative.get(node, (0, 0))
    tentative[node] = (rc + to_rate(vnf[0]), rm + to_mem(vnf[1]))


def _sequential(problem: PlacementProblem, choose) -> PlacementDecision:
    tentative = pinned_load(problem)
    assignment = dict(problem.fixed)
    for i in problem.free_indices:
        cands = feasible_nodes(problem, i, tentative)
        if not cands:
            return PlacementDecision.reject()
        node = choose(i, cands, tentative)
        assignment[i] = node
        _add_load(tentative, node, problem.request.vnfs[i])
    return PlacementDecision(tuple(assignment[i] for i in range(len(problem.request.vnfs))))


def random_place(problem: PlacementProblem, seed) -> PlacementDecision:
    rng = np.random.default_rng(seed)
    return _sequential(problem, lambda i, cands, _t: cands[int(rng.integers(len(cands)))])


def greedy_place(problem: PlacementProblem) -> PlacementDecision:
    """Largest residual compute first; ties on residual memory, then smallest id."""
    led = problem.ledger

    def choose(_i, cands, tentative):
        def key(n):
            tc, tm = tentative.get(n, (0, 0))
            return (-(led.compute_residual[n] - tc), -(led.memory_residual[n] - tm), n)
        return min(cands, key=key)

    return _sequential(problem, choose)


# -- simulated annealing ------------------------------------------------------------


@dataclass(frozen=True)
class AnnealingConfig:
    budget_iterations: int = 2000
    target_acceptance: float = 0.8
    probe_moves: int = 50
    cooling_factor: float = 0.95
    cooling_every: int = 20
    balance_weight: float = 1.0
    hop_weight: float = 0.1

    @classmethod
    def load(cls, path) -> "AnnealingConfig":
        doc = json.loads(Path(path).read_text())
        return cls(**{k: doc[k] for k in asdict(cls()) if k in doc})


class PlacementObjective:
    """Scores complete assignments: balance of node utilisation minus weighted hop count."""

    def __init__(self, problem: PlacementProblem, balance_weight: float = 1.0, hop_weight: float = 0.1):
        self.problem = problem
        self.w_balance = balance_weight
        self.w_hops = hop_weight
        led, snap = problem.ledger, problem.snapshot
        self.nodes = [n for n in led.node_order if snap.is_up(n)]
        self.index = {n: i for i, n in enumerate(self.nodes)}
        self.cap = {n: float(led.compute_capacity[n]) for n in self.nodes}
        self.base_util = {n: (led.compute_capacity[n] - led.compute_residual[n]) / self.cap[n] for n in self.nodes}
        u = np.fromiter(self.base_util.values(), dtype=float, count=len(self.nodes))
        # running sums give the variance update in O(chain length)
        self.sum_u = float(u.sum())
        self.sum_u2 = float((u * u).sum())
        req = problem.request
        self.demands = [(to_rate(c), to_mem(m)) for c, m in req.vnfs]
        # (src, dst, bw) with ints naming VNF indices and strings naming attachment nodes
        last = len(req.vnfs) - 1
        self.legs = [(i, i + 1, to_rate(bw)) for i, bw in enumerate(req.vlinks)]
        for seg in segments_for(req, list(range(len(req.vnfs)))):
            if seg.name == "in":
                self.legs.append((req.ingress_node, 0, seg.bandwidth))
            elif seg.name == "out":
                self.legs.append((last, req.egress_node, seg.bandwidth))
        self._hops: dict = {}

    def _hop_matrix(self, bw: int):
        if bw not in self._hops:
            snap, led = self.problem.snapshot, self.problem.ledger
            n = len(self.nodes)
            rows, cols, wts = [], [], []
            for (a, b), link in snap.links.items():
                if a in self.index and b in self.index and led.link_residual.get((a, b), 0) >= bw:
                    rows += [self.index[a], self.index[b]]
                    cols += [self.index[b], self.index[a]]
                    wts += [link.prop_delay_ms, link.prop_delay_ms]
            graph = csr_matrix((wts, (rows, cols)), shape=(n, n))
            _, pred = dijkstra(graph, directed=True, return_predecessors=True)
            self._hops[bw] = (pred, {})
        return self._hops[bw]

    def hops(self, src: str, dst: str, bw: int) -> float:
        if src == dst:
            return 0.0
        if src not in self.index or dst not in self.index:
            return math.inf
        pred, memo = self._hop_matrix(bw)
        key = (src, dst)
        if key not in memo:
            s, t = self.index[src], self.index[dst]
            count = 0
            while t != s:
                t = pred[s, t]
                if t < 0:
                    count = math.inf
                    break
                count += 1
            memo[key] = count
        return memo[key]

    def __call__(self, assignment) -> float:
        led = self.problem.ledger
        load: dict = {}
        for node, (c, m) in zip(assignment, self.demands):
            rc, rm = load.get(node, (0, 0))
            load[node] = (rc + c, rm + m)
        sum_u, sum_u2 = self.sum_u, self.sum_u2
        for node, (c, m) in load.items():
            if node not in self.index or c > led.compute_residual[node] or m > led.memory_residual[node]:
                return -math.inf
            u0 = self.base_util[node]
            u1 = u0 + c / self.cap[node]
            sum_u += u1 - u0
            sum_u2 += u1 * u1 - u0 * u0
        hops = 0.0
        for src, dst, bw in self.legs:
            h = self.hops(assignment[src] if isinstance(src, int) else src,
                          assignment[dst] if isinstance(dst, int) else dst, bw)
            if math.isinf(h):
                return -math.inf
            hops += h
        n = len(self.nodes)
        variance = max(0.0, sum_u2 / n - (sum_u / n) ** 2)
        return -self.w_balance * variance - self.w_hops * hops


def placement_objective(problem: PlacementProblem, assignment, balance_weight=1.0, hop_weight=0.1) -> float:
    return PlacementObjective(problem, balance_weight, hop_weight)(assignment)


def metaheuristic_place(problem: PlacementProblem, budget_iterations: int = 2000, seed=0,
                        config: AnnealingConfig | None = None) -> PlacementDecision:
    """Simulated annealing over complete assignments, started from the greedy one.

    ``budget_iterations`` counts evaluated assignments including the start, so a
    budget of 1 returns the starting point unchanged.
    """
    if budget_iterations < 1:
        raise ValueError("budget_iterations must be >= 1")
    cfg = config or AnnealingConfig()
    rng = np.random.default_rng(seed)
    req = problem.request
    free = problem.free_indices
    objective = PlacementObjective(problem, cfg.balance_weight, cfg.hop_weight)
    candidates = {i: feasible_nodes(problem, i, pinned_load(problem)) for i in free}
    if any(not c for c in candidates.values()):
        return PlacementDecision.reject()

    start = greedy_place(problem)
    if start.rejected:
        current = [problem.fixed.get(i) for i in range(len(req.vnfs))]
        for i in free:
            current[i] = candidates[i][int(rng.integers(len(candidates[i])))]
    else:
        current = list(start.assignment)
    if not free:
        score = objective(current)
        return PlacementDecision(tuple(current)) if score > -math.inf else PlacementDecision.reject()

    cur_score = objective(current)
    best, best_score = list(current), cur_score
    if budget_iterations == 1:
        return PlacementDecision(tuple(best)) if best_score > -math.inf else PlacementDecision.reject()

    # uniforms drawn in bulk: (vnf pick, node pick, acceptance) per move
    draws = rng.random((cfg.probe_moves + budget_iterations, 3))

    def neighbour(state, u):
        i = free[int(u[0] * len(free))]
        cands = candidates[i]
        nxt = list(state)
        nxt[i] = cands[int(u[1] * len(cands))]
        return nxt

    # initial temperature from the mean worsening over probe moves
    worse = []
    for p in range(cfg.probe_moves):
        d = objective(neighbour(current, draws[p])) - cur_score
        if math.isfinite(d) and d < 0:
            worse.append(-d)
    temperature = (float(np.mean(worse)) / -math.log(cfg.target_acceptance)) if worse else 1e-6

    for it in range(1, budget_iterations):
        u = draws[cfg.probe_moves + it]
        cand = neighbour(current, u)
        score = objective(cand)
        if cur_score == -math.inf:
            accept = True
        elif score == -math.inf:
            accept = False
        else:
            delta = score - cur_score
            accept = delta >= 0 or u[2] < math.exp(delta / max(temperature, 1e-300))
        if accept:
            current, cur_score = cand, score
            if cur_score > best_score:
                best, best_score = list(current), cur_score
        if it % cfg.cooling_every == 0:
            temperature *= cfg.cooling_factor
    if best_score == -math.inf:
        return PlacementDecision.reject()
    return PlacementDecision(tuple(best))


# -- policy objects used by the simulator -------------------------------------------


class Policy:
    name = "base"

    def place(self, problem: PlacementProblem) -> PlacementDecision:
        raise NotImplementedError

    def reset(self, seed: int) -> None:
        """Re-seed before a run; stateless policies ignore it."""


class _Seeded(Policy):
    def __init__(self, seed: int = 0):
        self.reset(seed)

    def reset(self, seed: int) -> None:
        self.seed = int(seed)
        self._calls = 0

    def _next_seed(self, problem: PlacementProblem) -> np.random.SeedSequence:
        self._calls += 1
        return np.random.SeedSequence([self.seed, problem.request.id, self._calls])


class RandomPolicy(_Seeded):
    name = "random"

    def place(self, problem):
        return random_place(problem, self._next_seed(problem))


class GreedyPolicy(Policy):
    name = "greedy"

    def place(self, problem):
        return greedy_place(problem)


class MetaheuristicPolicy(_Seeded):
    name = "meta"

    def __init__(self, seed: int = 0, config: AnnealingConfig | None = None):
        self.config = config or AnnealingConfig()
        super().__init__(seed)

    def place(self, problem):
        return metaheuristic_place(problem, self.config.budget_iterations, self._next_seed(problem), self.config)
