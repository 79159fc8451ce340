"""Shared builders for hand-made substrates and requests."""

from __future__ import annotations

import pytest

from sagin_sfco.geokinetics import SPEED_OF_LIGHT_KM_S, Link, Position, SnapshotSeries, TopologySnapshot, link_key
from sagin_sfco.scenario import (
    FixedGeodetic,
    LinkClass,
    NodeKind,
    NodeSpec,
    Scenario,
    SfcRequest,
    SlaProfile,
    TrafficClass,
    builtin_case_study,
)
from sagin_sfco.substrate import SubstrateLedger


def toy_network(nodes, links, t_index=0, down=()):
    """Scenario plus a hand-built snapshot.

    ``nodes`` maps id -> (kind, compute_mbps, memory_gb); ``links`` is a list of
    (a, b, delay_ms, capacity_mbps). Node positions are placeholders.
    """
    specs = tuple(NodeSpec(n, kind, c, m, FixedGeodetic(0.0, 0.0, 0.0)) for n, (kind, c, m) in nodes.items())
    sc = Scenario(specs, horizon_s=3600.0, snapshot_interval_s=600.0)
    snap = toy_snapshot(nodes, links, t_index, down)
    return sc, snap


def toy_snapshot(nodes, links, t_index=0, down=()):
    positions = {n: Position(0.0, 0.0, 0.0) for n in nodes}
    lk = {}
    for a, b, delay, cap in links:
        dist = delay / 1000.0 * SPEED_OF_LIGHT_KM_S
        lk[link_key(a, b)] = Link(*link_key(a, b), LinkClass.AIR_GROUND, cap, dist, delay)
    return TopologySnapshot(t_index, t_index * 600.0, positions, lk, frozenset(down))


def toy_ledger(nodes, links):
    sc, snap = toy_network(nodes, links)
    return SubstrateLedger(sc, snap), snap


def make_request(rid=0, vnfs=((10.0, 1.0),), vlinks=(), latency_ms=500.0, cls=TrafficClass.MMTC,
                 arrival=0.0, lifetime=600.0, sigma=0.1, ingress=None, egress=None):
    return SfcRequest(rid, arrival, lifetime, tuple(vnfs), tuple(vlinks), SlaProfile(cls, latency_ms, sigma),
                      ingress, egress)


G, A, S = NodeKind.GROUND, NodeKind.AIR, NodeKind.SPACE


@pytest.fixture(scope="session")
def henan():
    return builtin_case_study()


@pytest.fixture(scope="session")
def henan_series(henan):
    return SnapshotSeries(henan)


def micro_instance(rng):
    """Random 5-node placement problem with some background load and a 2-3 VNF request."""
    from sagin_sfco.policies import PlacementProblem
    from sagin_sfco.substrate import admit

    kinds = [G, A, S]
    nodes = {}
    for i in range(5):
        k = kinds[int(rng.integers(3))]
        nodes[f"m{i}"] = (k, float(rng.choice([200.0, 300.0, 500.0])), float(rng.choice([8.0, 16.0])))
    links = []
    order = list(rng.permutation(5))
    for a, b in zip(order, order[1:]):  # a random spanning path keeps the graph connected
        links.append((f"m{a}", f"m{b}", float(rng.uniform(0.5, 5.0)), float(rng.choice([50.0, 100.0]))))
    for a in range(5):
        for b in range(a + 1, 5):
            if rng.random() < 0.3 and not any({f"m{a}", f"m{b}"} == {x, y} for x, y, _, _ in links):
                links.append((f"m{a}", f"m{b}", float(rng.uniform(0.5, 5.0)), float(rng.choice([50.0, 100.0]))))
    led, snap = toy_ledger(nodes, links)
    for j, n in enumerate(nodes):
        load = round(float(rng.uniform(0, 0.6)) * nodes[n][1], 1)
        if load > 0:
            admit(led, snap, make_request(1000 + j, vnfs=((load, 1.0),), sigma=0.0), [n])
    length = int(rng.integers(2, 4))
    vnfs = tuple((round(float(rng.uniform(10, 80)), 1), round(float(rng.uniform(0.5, 3)), 2)) for _ in range(length))
    vlinks = tuple(round(float(rng.uniform(1, 10)), 1) for _ in range(length - 1))
    req = make_request(1, vnfs=vnfs, vlinks=vlinks, latency_ms=500.0)
    return PlacementProblem(req, snap, led)
