"""Resource ledger, routing, network-calculus admission and live migration.

Quantities are stored as integers: compute and bandwidth in tenths of a
Mbps, memory in hundredths of a Gb, so reservation plus residual equals
capacity exactly after any sequence of operations.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import InsufficientNodeResources, NoPath, SlaViolated, StabilityError, UnknownRequest
from .geokinetics import TopologySnapshot, link_key
from .scenario import NodeKind, Scenario, SfcRequest

RATE_SCALE = 10  # tenths of a Mbps
MEM_SCALE = 100  # hundredths of a Gb

NODE_LATENCY_MS = {NodeKind.SPACE: 2.0, NodeKind.AIR: 1.0, NodeKind.GROUND: 0.5}


def to_rate(mbps: float) -> int:
    return int(round(mbps * RATE_SCALE))


def to_mem(gb: float) -> int:
    return int(round(gb * MEM_SCALE))


# -- network calculus ---------------------------------------------------------------


def nc_delay_bound(sigma_mb: float, rho_mbps: float, servers, prop_delays_ms=()) -> float:
    """Worst-case delay (ms) of a token-bucket flow through concatenated rate-latency servers.

    The concatenation of ``beta_{R_i,T_i}`` is ``beta_{min R, sum T}``, whose
    horizontal deviation from ``sigma + rho t`` is ``sum T + sigma / min R``.
    Propagation adds linearly. ``servers`` holds ``(R_mbps, T_ms)`` pairs.
    """
    servers = list(servers)
    if not servers:
        raise ValueError("at least one server is required")
    rates = [r for r, _ in servers]
    if any(r <= 0 for r in rates):
        raise ValueError("service rates must be positive")
    r_min = min(rates)
    if rho_mbps > r_min:
        raise StabilityError(f"arrival rate {rho_mbps} Mbps exceeds bottleneck service rate {r_min} Mbps")
    return sum(t for _, t in servers) + sigma_mb / r_min * 1000.0 + sum(prop_delays_ms)


def flow_rate_mbps(request: SfcRequest) -> float:
    """Sustained rate of the chain: its narrowest virtual link (0 for a lone VNF)."""
    return min(request.vlinks) if request.vlinks else 0.0


# -- embeddings ---------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    name: str  # "v<i>" for vlink i, "in"/"out" for attachment legs
    src: str
    dst: str
    bandwidth: int  # scaled


def segments_for(request: SfcRequest, vnf_map) -> list[Segment]:
    segs = [Segment(f"v{i}", vnf_map[i], vnf_map[i + 1], to_rate(bw)) for i, bw in enumerate(request.vlinks)]
    leg_bw = to_rate(request.vlinks[0]) if request.vlinks else 0
    if request.ingress_node is not None:
        segs.append(Segment("in", request.ingress_node, vnf_map[0], leg_bw))
    if request.egress_node is not None:
        out_bw = to_rate(request.vlinks[-1]) if request.vlinks else 0
        segs.append(Segment("out", vnf_map[-1], request.egress_node, out_bw))
    return segs


def stranded_vnf_for(segment_name: str, chain_length: int) -> int:
    if segment_name == "in":
        return 0
    if segment_name == "out":
        return chain_length - 1
    return int(segment_name[1:]) + 1


@dataclass(frozen=True)
class Embedding:
    request: SfcRequest
    vnf_map: tuple[str, ...]
    paths: dict  # segment name -> node tuple; () when endpoints coincide
    admitted_t_index: int
    delay_bound_ms: float
    migration_count: int = 0

    @property
    def request_id(self) -> int:
        return self.request.id

    @property
    def path_map(self) -> tuple[tuple[str, ...], ...]:
        return tuple(self.paths[f"v{i}"] for i in range(len(self.request.vlinks)))

    def segments(self) -> list[Segment]:
        return segments_for(self.request, self.vnf_map)

    def node_reservations(self) -> dict:
        out: dict = {}
        for node, (c, m) in zip(self.vnf_map, self.request.vnfs):
            rc, rm = out.get(node, (0, 0))
            out[node] = (rc + to_rate(c), rm + to_mem(m))
        return out

    def link_reservations(self) -> dict:
        out: dict = {}
        for seg in self.segments():
            path = self.paths[seg.name]
            for a, b in zip(path, path[1:]):
                k = link_key(a, b)
                out[k] = out.get(k, 0) + seg.bandwidth
        return out

    def total_hops(self) -> int:
        return sum(max(0, len(p) - 1) for p in self.paths.values())

    def vlink_hops(self) -> list[int]:
        return [max(0, len(p) - 1) for p in self.path_map]


# -- ledger -------------------------------------------------------------------------


class SubstrateLedger:
    """Residual compute/memory/bandwidth for the current snapshot plus active embeddings."""

    def __init__(self, scenario: Scenario, snapshot: TopologySnapshot):
        self.scenario = scenario
        self.kinds = {n.id: n.kind for n in scenario.nodes}
        self.node_order = scenario.node_ids
        self.compute_capacity = {n.id: to_rate(n.compute_capacity) for n in scenario.nodes}
        self.memory_capacity = {n.id: to_mem(n.memory_capacity) for n in scenario.nodes}
        self.compute_residual = dict(self.compute_capacity)
        self.memory_residual = dict(self.memory_capacity)
        self.link_capacity = {k: to_rate(l.capacity_mbps) for k, l in snapshot.links.items()}
        self.link_residual = dict(self.link_capacity)
        self.embeddings: dict = {}
        self.snapshot = snapshot
        self.t_index = snapshot.t_index

    # views
    def residual_compute_mbps(self, node: str) -> float:
        return self.compute_residual[node] / RATE_SCALE

    def residual_memory_gb(self, node: str) -> float:
        return self.memory_residual[node] / MEM_SCALE

    def residual_bandwidth_mbps(self, a: str, b: str) -> float:
        return self.link_residual.get(link_key(a, b), 0) / RATE_SCALE

    def is_up(self, node: str) -> bool:
        return self.snapshot.is_up(node)

    def copy(self) -> "SubstrateLedger":
        other = object.__new__(SubstrateLedger)
        other.__dict__.update(self.__dict__)
        for name in ("compute_residual", "memory_residual", "link_capacity", "link_residual", "embeddings"):
            setattr(other, name, dict(getattr(self, name)))
        return other

    def adopt(self, other: "SubstrateLedger") -> None:
        for name in ("compute_residual", "memory_residual", "link_capacity", "link_residual", "embeddings",
                     "snapshot", "t_index"):
            setattr(self, name, getattr(other, name))

    def state(self) -> dict:
        return {
            "t_index": self.t_index,
            "compute_residual": sorted(self.compute_residual.items()),
            "memory_residual": sorted(self.memory_residual.items()),
            "link_residual": sorted((f"{a}|{b}", v) for (a, b), v in self.link_residual.items()),
            "link_capacity": sorted((f"{a}|{b}", v) for (a, b), v in self.link_capacity.items()),
            "embeddings": [[rid, list(e.vnf_map), sorted((k, list(p)) for k, p in e.paths.items()),
                            e.migration_count] for rid, e in self.embeddings.items()],
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.state(), sort_keys=True).encode()).hexdigest()

    def audit(self) -> dict:
        """JSON-ready dump: capacities, residuals and reservations for CI conservation checks."""
        node_res, link_res = self.reservation_totals()
        return {
            "t_index": self.t_index,
            "nodes": [{"id": n, "compute_capacity": self.compute_capacity[n],
                       "compute_residual": self.compute_residual[n],
                       "compute_reserved": node_res.get(n, (0, 0))[0],
                       "memory_capacity": self.memory_capacity[n], "memory_residual": self.memory_residual[n],
                       "memory_reserved": node_res.get(n, (0, 0))[1]} for n in self.node_order],
            "links": [{"a": a, "b": b, "capacity": self.link_capacity[(a, b)],
                       "residual": self.link_residual[(a, b)], "reserved": link_res.get((a, b), 0)}
                      for a, b in sorted(self.link_capacity)],
            "active": sorted(self.embeddings),
            "units": {"rate": f"1/{RATE_SCALE} Mbps", "memory": f"1/{MEM_SCALE} Gb"},
        }

    def reservation_totals(self) -> tuple[dict, dict]:
        nodes: dict = {}
        links: dict = {}
        for e in self.embeddings.values():
            for n, (c, m) in e.node_reservations().items():
                rc, rm = nodes.get(n, (0, 0))
                nodes[n] = (rc + c, rm + m)
            for k, bw in e.link_reservations().items():
                links[k] = links.get(k, 0) + bw
        return nodes, links

    def check_conservation(self) -> None:
        """Raise AssertionError unless residual + reservations == capacity everywhere."""
        nodes, links = self.reservation_totals()
        for n in self.node_order:
            c, m = nodes.get(n, (0, 0))
            assert self.compute_residual[n] + c == self.compute_capacity[n], f"compute drift at {n}"
            assert self.memory_residual[n] + m == self.memory_capacity[n], f"memory drift at {n}"
            assert 0 <= self.compute_residual[n] <= self.compute_capacity[n], f"compute out of range at {n}"
            assert 0 <= self.memory_residual[n] <= self.memory_capacity[n], f"memory out of range at {n}"
        for k, cap in self.link_capacity.items():
            assert self.link_residual[k] + links.get(k, 0) == cap, f"bandwidth drift on {k}"
            assert 0 <= self.link_residual[k] <= cap, f"bandwidth out of range on {k}"
        for k in links:
            assert k in self.link_capacity, f"reservation on unknown link {k}"

    # mutation primitives; callers guarantee feasibility
    def _reserve(self, emb: Embedding, sign: int) -> None:
        for n, (c, m) in emb.node_reservations().items():
            self.compute_residual[n] -= sign * c
            self.memory_residual[n] -= sign * m
        for k, bw in emb.link_reservations().items():
            self.link_residual[k] -= sign * bw

    def _advance(self, snapshot: TopologySnapshot) -> set:
        """Switch to ``snapshot``; links still carrying reservations but gone are kept as stale."""
        _, reserved = self.reservation_totals()
        capacity, residual = {}, {}
        for k, l in snapshot.links.items():
            cap = to_rate(l.capacity_mbps)
            capacity[k] = cap
            residual[k] = cap - reserved.get(k, 0)
        stale = set()
        for k, bw in reserved.items():
            if k not in capacity:
                capacity[k] = self.link_capacity[k]
                residual[k] = self.link_residual[k]
                stale.add(k)
        self.link_capacity, self.link_residual = capacity, residual
        self.snapshot = snapshot
        self.t_index = snapshot.t_index
        return stale

    def _drop_stale(self, stale: set) -> None:
        _, reserved = self.reservation_totals()
        for k in stale:
            assert reserved.get(k, 0) == 0, f"stale link {k} still reserved"
            del self.link_capacity[k]
            del self.link_residual[k]


# -- routing ------------------------------------------------------------------------


def _dijkstra(snapshot: TopologySnapshot, residual: dict, src: str, dst: str, bw: int, blocked=frozenset()):
    # labels are (delay, path); tuple order gives the smallest-id-sequence tie-break
    best = {src: 0.0}
    heap = [(0.0, (src,))]
    done = set()
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        if u == dst:
            return path, d
        for v, link in snapshot.adjacency[u].items():
            if v in done or v in blocked or residual.get(link.key, 0) < bw:
                continue
            nd = d + link.prop_delay_ms
            if nd <= best.get(v, float("inf")):
                best[v] = nd
                heapq.heappush(heap, (nd, path + (v,)))
    return None, float("inf")


def route(snapshot: TopologySnapshot, ledger: SubstrateLedger, src: str, dst: str, bw_demand_mbps: float,
          *, residual: dict | None = None) -> tuple[tuple[str, ...], float]:
    """Minimum-propagation-delay path with residual bandwidth >= demand.

    Returns ``(path, delay_ms)``; ``path`` is ``()`` when ``src == dst``.
    """
    if src == dst:
        return (), 0.0
    if not (snapshot.is_up(src) and snapshot.is_up(dst)):
        raise NoPath(src, dst, bw_demand_mbps)
    res = ledger.link_residual if residual is None else residual
    path, delay = _dijkstra(snapshot, res, src, dst, to_rate(bw_demand_mbps), snapshot.down_nodes)
    if path is None:
        raise NoPath(src, dst, bw_demand_mbps)
    return path, delay


def path_delay_ms(snapshot: TopologySnapshot, path) -> float:
    return sum(snapshot.link(a, b).prop_delay_ms for a, b in zip(path, path[1:]))


def chain_delay_bound(ledger: SubstrateLedger, snapshot: TopologySnapshot, request: SfcRequest, vnf_map,
                      paths: dict) -> float:
    servers = [(c, NODE_LATENCY_MS[ledger.kinds[n]]) for n, (c, _) in zip(vnf_map, request.vnfs)]
    prop = [path_delay_ms(snapshot, p) for _, p in sorted(paths.items())]
    return nc_delay_bound(request.sla.burst_sigma_mb, flow_rate_mbps(request), servers, prop)


def _check_sla(ledger, snapshot, request, vnf_map, paths) -> float:
    try:
        bound = chain_delay_bound(ledger, snapshot, request, vnf_map, paths)
    except StabilityError:
        raise SlaViolated(float("inf"), request.sla.max_latency_ms) from None
    if bound > request.sla.max_latency_ms:
        raise SlaViolated(bound, request.sla.max_latency_ms)
    return bound


def _route_segments(snapshot, ledger, segs, residual: dict, fixed_paths: dict | None = None) -> dict:
    """Route ``segs`` in order against ``residual`` (mutated). Raises NoPath naming the segment."""
    paths = dict(fixed_paths or {})
    for seg in segs:
        if seg.src == seg.dst:
            paths[seg.name] = ()
            continue
        if not (snapshot.is_up(seg.src) and snapshot.is_up(seg.dst)):
            raise NoPath(seg.src, seg.dst, seg.bandwidth / RATE_SCALE, seg.name)
        path, _ = _dijkstra(snapshot, residual, seg.src, seg.dst, seg.bandwidth, snapshot.down_nodes)
        if path is None:
            raise NoPath(seg.src, seg.dst, seg.bandwidth / RATE_SCALE, seg.name)
        for a, b in zip(path, path[1:]):
            residual[link_key(a, b)] -= seg.bandwidth
        paths[seg.name] = path
    return paths


# -- admission ----------------------------------------------------------------------


def check_node_resources(ledger: SubstrateLedger, snapshot: TopologySnapshot, request: SfcRequest, placement) -> None:
    need: dict = {}
    for i, (node, (c, m)) in enumerate(zip(placement, request.vnfs)):
        if node not in ledger.compute_residual or not snapshot.is_up(node):
            raise InsufficientNodeResources(node, i, "availability")
        rc, rm = need.get(node, (0, 0))
        rc, rm = rc + to_rate(c), rm + to_mem(m)
        need[node] = (rc, rm)
        if rc > ledger.compute_residual[node]:
            raise InsufficientNodeResources(node, i, "compute")
        if rm > ledger.memory_residual[node]:
            raise InsufficientNodeResources(node, i, "memory")


def admit(ledger: SubstrateLedger, snapshot: TopologySnapshot, request: SfcRequest, placement) -> Embedding:
    """Reserve everything for ``request`` under ``placement`` or raise leaving the ledger untouched."""
    placement = tuple(placement)
    if len(placement) != len(request.vnfs):
        raise ValueError(f"placement covers {len(placement)} of {len(request.vnfs)} VNFs")
    if snapshot.t_index != ledger.t_index:
        raise ValueError(f"snapshot {snapshot.t_index} does not match ledger t_index {ledger.t_index}")
    if request.id in ledger.embeddings:
        raise ValueError(f"request {request.id} already embedded")
    check_node_resources(ledger, snapshot, request, placement)
    paths = _route_segments(snapshot, ledger, segments_for(request, placement), dict(ledger.link_residual))
    bound = _check_sla(ledger, snapshot, request, placement, paths)
    emb = Embedding(request, placement, paths, ledger.t_index, bound)
    ledger._reserve(emb, +1)
    ledger.embeddings[request.id] = emb
    return emb


def release(ledger: SubstrateLedger, request_id: int) -> Embedding:
    emb = ledger.embeddings.get(request_id)
    if emb is None:
        raise UnknownRequest(request_id)
    ledger._reserve(emb, -1)
    del ledger.embeddings[request_id]
    return emb


# -- migration ----------------------------------------------------------------------


class MigrationStatus(str, Enum):
    KEPT = "Kept"
    REROUTED = "Rerouted"
    MIGRATED = "Migrated"
    ABORTED = "Aborted"


class AbortReason(str, Enum):
    LINK_LOST = "LinkLost"
    NODE_LOST = "NodeLost"


@dataclass(frozen=True)
class MigrationOutcome:
    request_id: int
    status: MigrationStatus
    reason: AbortReason | None = None
    embedding: Embedding | None = None


def _broken_segments(emb: Embedding, snapshot: TopologySnapshot) -> list[Segment]:
    broken = []
    for seg in emb.segments():
        path = emb.paths[seg.name]
        if any(not snapshot.is_up(n) for n in path) or any(not snapshot.has_link(a, b) for a, b in zip(path, path[1:])):
            broken.append(seg)
    return broken


def _try_reroute(ledger: SubstrateLedger, snapshot, emb: Embedding, broken) -> Embedding | None:
    trial = ledger.copy()
    trial._reserve(emb, -1)
    del trial.embeddings[emb.request_id]
    keep = {k: p for k, p in emb.paths.items() if k not in {s.name for s in broken}}
    residual = dict(trial.link_residual)
    for seg in emb.segments():
        if seg.name in keep:
            p = keep[seg.name]
            for a, b in zip(p, p[1:]):
                residual[link_key(a, b)] -= seg.bandwidth
    try:
        paths = _route_segments(snapshot, trial, broken, residual, keep)
        bound = _check_sla(trial, snapshot, emb.request, emb.vnf_map, paths)
    except (NoPath, SlaViolated):
        return None
    new = replace(emb, paths=paths, delay_bound_ms=bound, migration_count=emb.migration_count + 1)
    trial._reserve(new, +1)
    trial.embeddings[emb.request_id] = new
    ledger.adopt(trial)
    return new


def _try_replace(ledger: SubstrateLedger, snapshot, emb: Embedding, stranded: set, policy, tag, predicted):
    if policy is None:
        return None
    from .policies import PlacementProblem

    trial = ledger.copy()
    trial._reserve(emb, -1)
    del trial.embeddings[emb.request_id]
    fixed = {i: n for i, n in enumerate(emb.vnf_map) if i not in stranded}
    problem = PlacementProblem(emb.request, snapshot, trial, tag, predicted, fixed, purpose="migration")
    decision = policy.place(problem)
    if decision.rejected:
        return None
    try:
        new = admit(trial, snapshot, emb.request, decision.assignment)
    except (InsufficientNodeResources, NoPath, SlaViolated):
        return None
    new = replace(new, admitted_t_index=emb.admitted_t_index, migration_count=emb.migration_count + 1)
    trial.embeddings[emb.request_id] = new
    ledger.adopt(trial)
    return new


def revalidate_and_migrate(ledger: SubstrateLedger, new_snapshot: TopologySnapshot, policy=None, *,
                           tag=None, predicted=None) -> list[MigrationOutcome]:
    """Move the ledger to ``new_snapshot`` and repair every active embedding, oldest first.

    Surviving embeddings are kept; broken virtual links are re-routed in place;
    otherwise ``policy`` picks new hosts for stranded VNFs. Anything still
    infeasible is aborted and its resources released.
    """
    if new_snapshot.t_index != ledger.t_index + 1:
        raise ValueError(f"expected snapshot {ledger.t_index + 1}, got {new_snapshot.t_index}")
    stale = ledger._advance(new_snapshot)
    outcomes = []
    for rid in list(ledger.embeddings):
        emb = ledger.embeddings[rid]
        lost_hosts = {i for i, n in enumerate(emb.vnf_map) if not new_snapshot.is_up(n)}
        broken = _broken_segments(emb, new_snapshot)
        if not lost_hosts and not broken:
            outcomes.append(MigrationOutcome(rid, MigrationStatus.KEPT, embedding=emb))
            continue
        if not lost_hosts:
            new = _try_reroute(ledger, new_snapshot, emb, broken)
            if new is not None:
                outcomes.append(MigrationOutcome(rid, MigrationStatus.REROUTED, embedding=new))
                continue
            stranded = {stranded_vnf_for(s.name, len(emb.vnf_map)) for s in broken}
        else:
            stranded = lost_hosts
        new = _try_replace(ledger, new_snapshot, emb, stranded, policy, tag, predicted)
        if new is not None:
            outcomes.append(MigrationOutcome(rid, MigrationStatus.MIGRATED, embedding=new))
            continue
        release(ledger, rid)
        reason = AbortReason.NODE_LOST if lost_hosts else AbortReason.LINK_LOST
        outcomes.append(MigrationOutcome(rid, MigrationStatus.ABORTED, reason, emb))
    ledger._drop_stale(stale)
    return outcomes
