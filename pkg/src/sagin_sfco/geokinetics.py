"""Node kinematics, link feasibility and time-indexed topology snapshots.

Spherical Earth rotating at the sidereal rate, circular orbits, no J2.
All positions are Earth-centred inertial (ECI) km.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DomainError
from .scenario import (
    FixedGeodetic,
    LinkClass,
    LinkPolicy,
    NodeKind,
    NodeSpec,
    OrbitSlot,
    Scenario,
    WaypointTrajectory,
)

EARTH_RADIUS_KM = 6371.0
MU_EARTH = 398600.4418  # km^3 / s^2
SPEED_OF_LIGHT_KM_S = 299792.458
SIDEREAL_DAY_S = 86164.0905
EARTH_ROTATION_RAD_S = 2.0 * math.pi / SIDEREAL_DAY_S


@dataclass(frozen=True)
class Position:
    x: float
    y: float
    z: float
    timestamp_s: float = 0.0

    @property
    def vec(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def radius(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    link_class: LinkClass
    capacity_mbps: float
    distance_km: float
    prop_delay_ms: float

    @property
    def key(self) -> tuple[str, str]:
        return link_key(self.a, self.b)


def link_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def propagation_delay_ms(distance_km: float) -> float:
    return distance_km / SPEED_OF_LIGHT_KM_S * 1000.0


@dataclass(frozen=True)
class TopologySnapshot:
    """Immutable substrate graph at one time index.

    ``links`` maps the sorted id pair to a :class:`Link`; adjacency is derived
    and symmetric. Nodes under outage stay in ``positions`` but appear in
    ``down_nodes`` and carry no links.
    """

    t_index: int
    time_s: float
    positions: dict
    links: dict
    down_nodes: frozenset = frozenset()
    adjacency: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        adj = {n: {} for n in self.positions}
        for (a, b), link in self.links.items():
            adj[a][b] = link
            adj[b][a] = link
        object.__setattr__(self, "adjacency", adj)

    @property
    def node_ids(self) -> list[str]:
        return list(self.positions)

    def has_link(self, a: str, b: str) -> bool:
        return link_key(a, b) in self.links

    def link(self, a: str, b: str) -> Link:
        return self.links[link_key(a, b)]

    def is_up(self, node_id: str) -> bool:
        return node_id in self.positions and node_id not in self.down_nodes

    def link_set(self) -> set[tuple[str, str]]:
        return set(self.links)

    def to_dict(self) -> dict:
        return {
            "t_index": self.t_index,
            "time_s": self.time_s,
            "nodes": [{"id": n, "x_km": p.x, "y_km": p.y, "z_km": p.z, "down": n in self.down_nodes}
                      for n, p in self.positions.items()],
            "links": [{"a": l.a, "b": l.b, "class": l.link_class.value, "capacity_mbps": l.capacity_mbps,
                       "distance_km": l.distance_km, "prop_delay_ms": l.prop_delay_ms}
                      for _, l in sorted(self.links.items())],
        }


# -- kinematics -----------------------------------------------------------------


def orbital_period(altitude_km: float) -> float:
    a = EARTH_RADIUS_KM + altitude_km
    if a <= 0:
        raise DomainError(f"semi-major axis {a} km is not positive")
    return 2.0 * math.pi * math.sqrt(a ** 3 / MU_EARTH)


def geodetic_to_eci(lat_deg: float, lon_deg: float, alt_km: float, t_s: float) -> Position:
    r = EARTH_RADIUS_KM + alt_km
    lat = math.radians(lat_deg)
    lon = math.radians(lon_deg) + EARTH_ROTATION_RAD_S * t_s
    return Position(r * math.cos(lat) * math.cos(lon), r * math.cos(lat) * math.sin(lon), r * math.sin(lat), t_s)


def _orbit_position(slot: OrbitSlot, t_s: float) -> Position:
    a = EARTH_RADIUS_KM + slot.altitude_km
    n = 2.0 * math.pi / orbital_period(slot.altitude_km)
    u = math.radians(slot.phase_deg) + n * t_s
    inc = math.radians(slot.inclination_deg)
    raan = math.radians(slot.raan_deg)
    # perifocal (circular) -> rotate by inclination then RAAN
    xp, yp = a * math.cos(u), a * math.sin(u)
    x1, y1, z1 = xp, yp * math.cos(inc), yp * math.sin(inc)
    x = x1 * math.cos(raan) - y1 * math.sin(raan)
    y = x1 * math.sin(raan) + y1 * math.cos(raan)
    return Position(x, y, z1, t_s)


def trajectory_geodetic(traj: WaypointTrajectory, t_s: float) -> tuple[float, float, float]:
    wps = traj.waypoints
    if t_s <= wps[0][0]:
        return wps[0][1:]
    if t_s >= wps[-1][0]:
        return wps[-1][1:]
    times = [w[0] for w in wps]
    k = int(np.searchsorted(times, t_s, side="right")) - 1
    t0, la0, lo0, h0 = wps[k]
    t1, la1, lo1, h1 = wps[k + 1]
    f = (t_s - t0) / (t1 - t0)
    return la0 + f * (la1 - la0), lo0 + f * (lo1 - lo0), h0 + f * (h1 - h0)


def propagate(node: NodeSpec, t_s: float) -> Position:
    mob = node.mobility
    if isinstance(mob, OrbitSlot):
        return _orbit_position(mob, t_s)
    if isinstance(mob, WaypointTrajectory):
        return geodetic_to_eci(*trajectory_geodetic(mob, t_s), t_s)
    if isinstance(mob, FixedGeodetic):
        return geodetic_to_eci(mob.latitude_deg, mob.longitude_deg, mob.altitude_km, t_s)
    raise TypeError(f"unsupported mobility {type(mob).__name__}")


# -- visibility -------------------------------------------------------------------


def elevation_deg(observer: Position, target: Position) -> float:
    """Elevation of ``target`` above the local horizontal plane at ``observer``."""
    o, d = observer.vec, target.vec - observer.vec
    dist = np.linalg.norm(d)
    if dist == 0.0:
        return 90.0
    sin_el = float(np.dot(d, o) / (dist * np.linalg.norm(o)))
    return math.degrees(math.asin(max(-1.0, min(1.0, sin_el))))


def segment_min_radius(pa: Position, pb: Position) -> float:
    """Minimum distance from the Earth centre to the segment ``pa``-``pb``."""
    a, b = pa.vec, pb.vec
    d = b - a
    dd = float(np.dot(d, d))
    if dd == 0.0:
        return float(np.linalg.norm(a))
    s = min(1.0, max(0.0, -float(np.dot(a, d)) / dd))
    return float(np.linalg.norm(a + s * d))


def visible(pa: Position, pb: Position, rule: LinkPolicy, link_class: LinkClass,
            *, isl_neighbors: bool = True) -> tuple[bool, float]:
    """Link feasibility between two positions for the given link class.

    For SpaceGround/SpaceAir, ``pa`` or ``pb`` may be the satellite: the
    elevation is measured from whichever endpoint is lower. ``isl_neighbors``
    carries the outcome of the constellation neighbour rule for InterSatellite.
    """
    dist = float(np.linalg.norm(pa.vec - pb.vec))
    if link_class in (LinkClass.SPACE_GROUND, LinkClass.SPACE_AIR):
        low, high = (pa, pb) if pa.radius <= pb.radius else (pb, pa)
        return elevation_deg(low, high) >= rule.elevation_mask_deg, dist
    if link_class is LinkClass.INTER_SATELLITE:
        clear = segment_min_radius(pa, pb) >= EARTH_RADIUS_KM + rule.los_clearance_km
        return bool(clear and isl_neighbors), dist
    if link_class is LinkClass.AIR_GROUND:
        # geometric line of sight over the sphere plus a radio range cap
        clear = segment_min_radius(pa, pb) >= EARTH_RADIUS_KM - 1e-6
        return bool(clear and dist <= rule.air_ground_max_range_km), dist
    raise ValueError(f"unknown link class {link_class!r}")


_CLASS_BY_KINDS = {
    frozenset([NodeKind.SPACE]): LinkClass.INTER_SATELLITE,
    frozenset([NodeKind.SPACE, NodeKind.GROUND]): LinkClass.SPACE_GROUND,
    frozenset([NodeKind.SPACE, NodeKind.AIR]): LinkClass.SPACE_AIR,
    frozenset([NodeKind.AIR, NodeKind.GROUND]): LinkClass.AIR_GROUND,
}


def link_class_for(ka: NodeKind, kb: NodeKind) -> LinkClass | None:
    """Ground-ground and air-air pairs have no link class and never connect."""
    return _CLASS_BY_KINDS.get(frozenset([ka, kb]))


# -- constellation structure ------------------------------------------------------


@lru_cache(maxsize=32)
def orbital_planes(scenario: Scenario) -> tuple[tuple[str, ...], ...]:
    """Satellite ids grouped by plane (RAAN order), each plane sorted by phase."""
    groups: dict = {}
    for n in scenario.nodes:
        if isinstance(n.mobility, OrbitSlot):
            m = n.mobility
            key = (round(m.altitude_km, 6), round(m.inclination_deg, 6), round(m.raan_deg, 6))
            groups.setdefault(key, []).append(n)
    planes = []
    for key in sorted(groups, key=lambda k: (k[2], k[0], k[1])):
        members = sorted(groups[key], key=lambda n: (n.mobility.phase_deg, n.id))
        planes.append(tuple(n.id for n in members))
    return tuple(planes)


def isl_neighbor_pairs(scenario: Scenario, positions: dict) -> set[tuple[str, str]]:
    """Grid rule: intra-plane ring neighbours plus the nearest satellite in each adjacent plane."""
    planes = orbital_planes(scenario)
    pairs = set()
    for plane in planes:
        if len(plane) > 1:
            for i, s in enumerate(plane):
                nxt = plane[(i + 1) % len(plane)]
                if nxt != s:
                    pairs.add(link_key(s, nxt))
    if len(planes) > 1:
        for pi, plane in enumerate(planes):
            neighbours = {(pi - 1) % len(planes), (pi + 1) % len(planes)} - {pi}
            for qi in sorted(neighbours):
                other = planes[qi]
                other_xyz = np.array([positions[o].vec for o in other])
                for s in plane:
                    d = np.linalg.norm(other_xyz - positions[s].vec, axis=1)
                    pairs.add(link_key(s, other[int(np.argmin(d))]))
    return pairs


# -- snapshots --------------------------------------------------------------------


def _outages_at(scenario: Scenario, t_s: float, include_unscheduled: bool):
    down_nodes, down_links = set(), set()
    for o in scenario.outage_schedule:
        if not o.active_at(t_s) or (not o.scheduled and not include_unscheduled):
            continue
        if o.is_link:
            down_links.add(link_key(*o.target))
        else:
            down_nodes.add(o.target[0])
    return down_nodes, down_links


def candidate_links(scenario: Scenario, t_s: float) -> tuple[dict, dict]:
    """Positions and every geometrically feasible link at ``t_s``, ignoring outages."""
    positions = {n.id: propagate(n, t_s) for n in scenario.nodes}
    kinds = {n.id: n.kind for n in scenario.nodes}
    isl_pairs = isl_neighbor_pairs(scenario, positions) if scenario.link_policy.isl_rule == "grid" else None
    ids = scenario.node_ids
    links = {}
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            cls = link_class_for(kinds[a], kinds[b])
            if cls is None:
                continue
            neighbours = True if isl_pairs is None else link_key(a, b) in isl_pairs
            if cls is LinkClass.INTER_SATELLITE and not neighbours:
                continue
            ok, dist = visible(positions[a], positions[b], scenario.link_policy, cls, isl_neighbors=neighbours)
            if ok:
                key = link_key(a, b)
                links[key] = Link(key[0], key[1], cls, float(scenario.link_bandwidths[cls]), dist,
                                  propagation_delay_ms(dist))
    return positions, links


@lru_cache(maxsize=512)
def _geometry(scenario: Scenario, t_index: int):
    return candidate_links(scenario, t_index * scenario.snapshot_interval_s)


def _assemble(scenario: Scenario, t_index: int, include_unscheduled: bool) -> TopologySnapshot:
    if not 0 <= t_index < scenario.snapshot_count:
        raise IndexError(f"t_index {t_index} outside [0, {scenario.snapshot_count})")
    t_s = t_index * scenario.snapshot_interval_s
    positions, links = _geometry(scenario, t_index)
    down_nodes, down_links = _outages_at(scenario, t_s, include_unscheduled)
    kept = {k: l for k, l in links.items()
            if k not in down_links and k[0] not in down_nodes and k[1] not in down_nodes}
    return TopologySnapshot(t_index, t_s, dict(positions), kept, frozenset(down_nodes))


def build_snapshot(scenario: Scenario, t_index: int) -> TopologySnapshot:
    return _assemble(scenario, t_index, include_unscheduled=True)


def predict_snapshot(scenario: Scenario, t_index: int) -> TopologySnapshot:
    """Snapshot as foreseeable from orbits, trajectories and the published outage schedule."""
    return _assemble(scenario, t_index, include_unscheduled=False)


def build_all_snapshots(scenario: Scenario) -> list[TopologySnapshot]:
    return [build_snapshot(scenario, k) for k in range(scenario.snapshot_count)]


def export_snapshots(snapshots, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for snap in snapshots:
        p = out / f"t{snap.t_index:03d}.json"
        p.write_text(json.dumps(snap.to_dict(), indent=1) + "\n")
        paths.append(p)
    return paths


# -- temporal aggregation ---------------------------------------------------------


@dataclass(frozen=True)
class TagFeatures:
    window: int
    persistence: dict  # link key -> fraction of window snapshots containing it
    predicted_present: dict  # link key -> bool for t_index + 1

    def score(self, key) -> float:
        return self.persistence.get(key, 0.0)

    def node_persistence(self, snapshot: TopologySnapshot) -> dict:
        """Mean persistence of each node's current links; links predicted to vanish count as 0."""
        out = {}
        for n, nbrs in snapshot.adjacency.items():
            if not nbrs:
                out[n] = 0.0
                continue
            total = 0.0
            for m in nbrs:
                k = link_key(n, m)
                if self.predicted_present.get(k, True):
                    total += self.persistence.get(k, 0.0)
            out[n] = total / len(nbrs)
        return out


def tag_features(window, next_snapshot: TopologySnapshot | None = None) -> TagFeatures:
    snaps = list(window)
    if not snaps:
        raise ValueError("TAG window must contain at least one snapshot")
    k = len(snaps)
    counts: dict = {}
    for s in snaps:
        for key in s.links:
            counts[key] = counts.get(key, 0) + 1
    persistence = {key: c / k for key, c in counts.items()}
    keys = set(counts)
    if next_snapshot is not None:
        keys |= set(next_snapshot.links)
        predicted = {key: key in next_snapshot.links for key in keys}
    else:
        predicted = {key: True for key in keys}
    return TagFeatures(k, persistence, predicted)


class SnapshotSeries:
    """Cached actual/predicted snapshots and TAG features for one scenario."""

    def __init__(self, scenario: Scenario, tag_window: int = 5):
        if tag_window < 1:
            raise ValueError("tag_window must be >= 1")
        self.scenario = scenario
        self.tag_window = tag_window
        self.count = scenario.snapshot_count
        self._actual = [build_snapshot(scenario, k) for k in range(self.count)]
        self._predicted = [predict_snapshot(scenario, k) for k in range(self.count)]
        self._tag: dict = {}

    def __len__(self):
        return self.count

    def actual(self, k: int) -> TopologySnapshot:
        return self._actual[k]

    def predicted(self, k: int) -> TopologySnapshot:
        return self._predicted[min(k, self.count - 1)]

    def tag(self, k: int) -> TagFeatures:
        if k not in self._tag:
            lo = max(0, k - self.tag_window + 1)
            nxt = self._predicted[k + 1] if k + 1 < self.count else None
            self._tag[k] = tag_features(self._actual[lo:k + 1], nxt)
        return self._tag[k]
