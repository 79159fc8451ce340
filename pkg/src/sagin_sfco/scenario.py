"""Scenario domain types, JSON schema I/O and the built-in Henan flood case study.

A scenario file is one JSON document; field names carry their units::

    {
      "schema": "sagin-scenario/1",
      "horizon_s": 36000, "snapshot_interval_s": 600, "rng_seed": 0,
      "link_policy": {"elevation_mask_deg": 10, "los_clearance_km": 80,
                      "isl_rule": "grid", "air_ground_max_range_km": 150},
      "link_bandwidths_mbps": {"SpaceGround": 200, "InterSatellite": 500,
                               "AirGround": 100, "SpaceAir": 200},
      "nodes": [{"id": "sat-0-0", "kind": "Space",
                 "compute_capacity_mbps": 3000, "memory_capacity_gb": 512,
                 "mobility": {"type": "OrbitSlot", ...}}, ...],
      "outage_schedule": [{"node": "sat-0-3", "start_s": 0, "end_s": 600,
                           "scheduled": true}, ...]
    }

See README.md for the field-by-field reference.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Union

from .errors import ParseError, ValidationError

SCHEMA_ID = "sagin-scenario/1"


class NodeKind(str, Enum):
    SPACE = "Space"
    AIR = "Air"
    GROUND = "Ground"


class LinkClass(str, Enum):
    SPACE_GROUND = "SpaceGround"
    INTER_SATELLITE = "InterSatellite"
    AIR_GROUND = "AirGround"
    SPACE_AIR = "SpaceAir"


class TrafficClass(str, Enum):
    URLLC = "URLLC"
    MMTC = "mMTC"
    EMBB = "eMBB"


@dataclass(frozen=True)
class OrbitSlot:
    altitude_km: float
    inclination_deg: float
    raan_deg: float
    phase_deg: float

    def __post_init__(self):
        for name in ("inclination_deg", "raan_deg", "phase_deg"):
            v = float(getattr(self, name)) % 360.0
            # a tiny negative angle rounds up to exactly 360
            object.__setattr__(self, name, 0.0 if v >= 360.0 else v)


@dataclass(frozen=True)
class WaypointTrajectory:
    # (time_s, latitude_deg, longitude_deg, altitude_km), piecewise linear
    waypoints: tuple[tuple[float, float, float, float], ...]


@dataclass(frozen=True)
class FixedGeodetic:
    latitude_deg: float
    longitude_deg: float
    altitude_km: float = 0.0


Mobility = Union[OrbitSlot, WaypointTrajectory, FixedGeodetic]


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: NodeKind
    compute_capacity: float  # Mbps
    memory_capacity: float  # Gb
    mobility: Mobility


# "grid": ring neighbours in a plane plus the nearest satellite of each adjacent
# plane; "visible": every satellite pair with clear line of sight.
ISL_RULES = ("grid", "visible")


@dataclass(frozen=True)
class LinkPolicy:
    elevation_mask_deg: float = 10.0
    los_clearance_km: float = 80.0
    isl_rule: str = "grid"
    air_ground_max_range_km: float = 150.0


@dataclass(frozen=True)
class OutageEntry:
    """Removes a node (one id) or a link (two ids) over ``[start_s, end_s)``.

    Unscheduled outages are invisible to topology prediction.
    """

    target: tuple[str, ...]
    start_s: float
    end_s: float
    scheduled: bool = True

    @property
    def is_link(self) -> bool:
        return len(self.target) == 2

    def active_at(self, t_s: float) -> bool:
        return self.start_s <= t_s < self.end_s


DEFAULT_LINK_BANDWIDTHS = {
    LinkClass.SPACE_GROUND: 200.0,
    LinkClass.INTER_SATELLITE: 500.0,
    LinkClass.AIR_GROUND: 100.0,
    LinkClass.SPACE_AIR: 200.0,
}


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[NodeSpec, ...]
    link_policy: LinkPolicy = field(default_factory=LinkPolicy)
    link_bandwidths: dict = field(default_factory=lambda: dict(DEFAULT_LINK_BANDWIDTHS))
    horizon_s: float = 36000.0
    snapshot_interval_s: float = 600.0
    outage_schedule: tuple[OutageEntry, ...] = ()
    rng_seed: int = 0

    @property
    def snapshot_count(self) -> int:
        return int(round(self.horizon_s / self.snapshot_interval_s))

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def node(self, node_id: str) -> NodeSpec:
        return self._index[node_id]

    @property
    def _index(self) -> dict:
        cached = self.__dict__.get("_index_cache")
        if cached is None:
            cached = {n.id: n for n in self.nodes}
            object.__setattr__(self, "_index_cache", cached)
        return cached

    def digest(self) -> str:
        """Stable short hash of the serialized scenario."""
        cached = self.__dict__.get("_digest_cache")
        if cached is None:
            blob = json.dumps(scenario_to_dict(self), sort_keys=True).encode()
            cached = hashlib.sha256(blob).hexdigest()[:16]
            object.__setattr__(self, "_digest_cache", cached)
        return cached

    def __hash__(self):
        return hash(self.digest())

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return self is other or scenario_to_dict(self) == scenario_to_dict(other)


@dataclass(frozen=True)
class SlaProfile:
    traffic_class: TrafficClass
    max_latency_ms: float
    burst_sigma_mb: float = 0.1


@dataclass(frozen=True)
class SfcRequest:
    id: int
    arrival_time_s: float
    lifetime_s: float
    vnfs: tuple[tuple[float, float], ...]  # (compute_demand_mbps, memory_demand_gb)
    vlinks: tuple[float, ...]  # bandwidth_mbps per consecutive VNF pair
    sla: SlaProfile
    ingress_node: str | None = None
    egress_node: str | None = None

    def __post_init__(self):
        if len(self.vnfs) < 1:
            raise ValidationError("vnfs", "an SFC needs at least one VNF")
        if len(self.vlinks) != len(self.vnfs) - 1:
            raise ValidationError("vlinks", f"expected {len(self.vnfs) - 1} entries, got {len(self.vlinks)}")
        if any(c <= 0 or m <= 0 for c, m in self.vnfs) or any(b <= 0 for b in self.vlinks):
            raise ValidationError("vnfs", "all demands must be positive")
        if self.lifetime_s <= 0:
            raise ValidationError("lifetime_s", "must be positive")
        if self.sla.max_latency_ms <= 0:
            raise ValidationError("sla.max_latency_ms", "must be positive")
        if self.sla.burst_sigma_mb < 0:
            raise ValidationError("sla.burst_sigma_mb", "must be non-negative")

    @property
    def traffic_class(self) -> TrafficClass:
        return self.sla.traffic_class


# -- validation ---------------------------------------------------------------


def validate_scenario(sc: Scenario) -> list[str]:
    """Raise ValidationError on hard violations; return soft warnings (also emitted)."""
    soft = []
    if not sc.snapshot_interval_s or sc.snapshot_interval_s <= 0:
        raise ValidationError("snapshot_interval_s", "must be positive")
    if sc.horizon_s <= 0:
        raise ValidationError("horizon_s", "must be positive")
    ratio = sc.horizon_s / sc.snapshot_interval_s
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ValidationError("snapshot_interval_s", f"horizon/interval = {ratio} is not a positive integer")
    ids = set()
    for i, n in enumerate(sc.nodes):
        where = f"nodes[{i}]"
        if n.id in ids:
            raise ValidationError(f"{where}.id", f"duplicate id {n.id!r}")
        ids.add(n.id)
        if not isinstance(n.kind, NodeKind):
            raise ValidationError(f"{where}.kind", f"unknown kind {n.kind!r}")
        if not n.compute_capacity > 0:
            raise ValidationError(f"{where}.compute_capacity_mbps", "must be positive")
        if not n.memory_capacity > 0:
            raise ValidationError(f"{where}.memory_capacity_gb", "must be positive")
        mob = n.mobility
        if isinstance(mob, OrbitSlot):
            if not mob.altitude_km > 0:
                raise ValidationError(f"{where}.mobility.altitude_km", "must be positive")
        elif isinstance(mob, WaypointTrajectory):
            wps = mob.waypoints
            if len(wps) < 2:
                raise ValidationError(f"{where}.mobility.waypoints", "need at least two waypoints")
            times = [w[0] for w in wps]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValidationError(f"{where}.mobility.waypoints", "times must be strictly increasing")
            if times[0] > 0 or times[-1] < sc.horizon_s:
                soft.append(f"{where}: trajectory does not cover [0, {sc.horizon_s}] s; position clamps")
        elif not isinstance(mob, FixedGeodetic):
            raise ValidationError(f"{where}.mobility", "exactly one mobility descriptor required")
    if sc.link_policy.isl_rule not in ISL_RULES:
        raise ValidationError("link_policy.isl_rule", f"expected one of {ISL_RULES}, got {sc.link_policy.isl_rule!r}")
    for cls in LinkClass:
        bw = sc.link_bandwidths.get(cls)
        if bw is None or bw <= 0:
            raise ValidationError(f"link_bandwidths_mbps.{cls.value}", "must be positive")
    for i, o in enumerate(sc.outage_schedule):
        if len(o.target) not in (1, 2):
            raise ValidationError(f"outage_schedule[{i}]", "target must be a node or a link")
        for t in o.target:
            if t not in ids:
                raise ValidationError(f"outage_schedule[{i}]", f"unknown id {t!r}")
        if o.end_s < o.start_s:
            raise ValidationError(f"outage_schedule[{i}].end_s", "ends before it starts")
    for msg in soft:
        warnings.warn(msg, stacklevel=2)
    return soft


# -- JSON ---------------------------------------------------------------------


def _mobility_to_dict(m: Mobility) -> dict:
    if isinstance(m, OrbitSlot):
        return {"type": "OrbitSlot", "altitude_km": float(m.altitude_km), "inclination_deg": m.inclination_deg,
                "raan_deg": m.raan_deg, "phase_deg": m.phase_deg}
    if isinstance(m, WaypointTrajectory):
        return {"type": "WaypointTrajectory", "interpolation": "linear-geodetic",
                "waypoints": [{"time_s": float(t), "latitude_deg": float(la), "longitude_deg": float(lo),
                               "altitude_km": float(h)} for t, la, lo, h in m.waypoints]}
    return {"type": "FixedGeodetic", "latitude_deg": float(m.latitude_deg), "longitude_deg": float(m.longitude_deg),
            "altitude_km": float(m.altitude_km)}


def _mobility_from_dict(d: dict, where: str) -> Mobility:
    kind = d.get("type")
    try:
        if kind == "OrbitSlot":
            return OrbitSlot(float(d["altitude_km"]), float(d["inclination_deg"]),
                             float(d["raan_deg"]), float(d["phase_deg"]))
        if kind == "WaypointTrajectory":
            wps = tuple((float(w["time_s"]), float(w["latitude_deg"]), float(w["longitude_deg"]),
                         float(w["altitude_km"])) for w in d["waypoints"])
            return WaypointTrajectory(wps)
        if kind == "FixedGeodetic":
            return FixedGeodetic(float(d["latitude_deg"]), float(d["longitude_deg"]),
                                 float(d.get("altitude_km", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}.mobility: {exc!r}") from exc
    raise ValidationError(f"{where}.mobility.type", f"unknown mobility type {kind!r}")


def scenario_to_dict(sc: Scenario) -> dict:
    outages = []
    for o in sc.outage_schedule:
        entry = {"node": o.target[0]} if not o.is_link else {"link": list(o.target)}
        entry.update(start_s=float(o.start_s), end_s=float(o.end_s), scheduled=bool(o.scheduled))
        outages.append(entry)
    lp = sc.link_policy
    return {
        "schema": SCHEMA_ID,
        "horizon_s": float(sc.horizon_s),
        "snapshot_interval_s": float(sc.snapshot_interval_s),
        "rng_seed": sc.rng_seed,
        "link_policy": {"elevation_mask_deg": lp.elevation_mask_deg, "los_clearance_km": lp.los_clearance_km,
                        "isl_rule": lp.isl_rule, "air_ground_max_range_km": lp.air_ground_max_range_km},
        "link_bandwidths_mbps": {c.value: float(sc.link_bandwidths[c]) for c in LinkClass},
        "nodes": [{"id": n.id, "kind": n.kind.value, "compute_capacity_mbps": float(n.compute_capacity),
                   "memory_capacity_gb": float(n.memory_capacity), "mobility": _mobility_to_dict(n.mobility)}
                  for n in sc.nodes],
        "outage_schedule": outages,
    }


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ParseError("scenario document must be a JSON object")
    try:
        nodes = []
        for i, nd in enumerate(doc["nodes"]):
            try:
                kind = NodeKind(nd["kind"])
            except ValueError:
                raise ValidationError(f"nodes[{i}].kind", f"unknown kind {nd['kind']!r}") from None
            nodes.append(NodeSpec(str(nd["id"]), kind, float(nd["compute_capacity_mbps"]),
                                  float(nd["memory_capacity_gb"]), _mobility_from_dict(nd["mobility"], f"nodes[{i}]")))
        lp_doc = doc.get("link_policy", {})
        lp = LinkPolicy(**{k: lp_doc[k] for k in ("elevation_mask_deg", "los_clearance_km", "isl_rule",
                                                   "air_ground_max_range_km") if k in lp_doc})
        bw = dict(DEFAULT_LINK_BANDWIDTHS)
        for k, v in doc.get("link_bandwidths_mbps", {}).items():
            try:
                bw[LinkClass(k)] = float(v)
            except ValueError:
                raise ValidationError(f"link_bandwidths_mbps.{k}", "unknown link class") from None
        outages = []
        for i, od in enumerate(doc.get("outage_schedule", [])):
            if "node" in od:
                target = (str(od["node"]),)
            elif "link" in od:
                target = tuple(str(x) for x in od["link"])
            else:
                raise ValidationError(f"outage_schedule[{i}]", "needs 'node' or 'link'")
            outages.append(OutageEntry(target, float(od["start_s"]), float(od["end_s"]),
                                       bool(od.get("scheduled", True))))
        sc = Scenario(nodes=tuple(nodes), link_policy=lp, link_bandwidths=bw,
                      horizon_s=float(doc["horizon_s"]), snapshot_interval_s=float(doc["snapshot_interval_s"]),
                      outage_schedule=tuple(outages), rng_seed=int(doc.get("rng_seed", 0)))
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ParseError(str(exc)) from exc
    validate_scenario(sc)
    return sc


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return scenario_from_dict(doc)


def dumps_scenario(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), indent=2)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(sc) + "\n")


# -- built-in case study ------------------------------------------------------

HENAN_CENTER = (34.75, 113.62)
KUIPER_INCLINATION_DEG = 51.9
CAPACITY_BY_KIND = {NodeKind.SPACE: 3000.0, NodeKind.AIR: 300.0, NodeKind.GROUND: 20000.0}
MEMORY_GB = 512.0


def _box_offset(center, north_km, east_km):
    lat0, lon0 = center
    dlat = north_km / 111.195
    dlon = east_km / (111.195 * math.cos(math.radians(lat0)))
    return lat0 + dlat, lon0 + dlon


def builtin_case_study(
    *,
    center: tuple[float, float] = HENAN_CENTER,
    box_km: float = 200.0,
    planes: int = 4,
    sats_per_plane: int = 10,
    altitude_km: float = 590.0,
    uav_count: int = 5,
    uav_altitude_km: float = 3.0,
    uav_loop_period_s: float = 7200.0,
) -> Scenario:
    """Henan flood relief network: 4x10 LEO shell, 5 patrolling UAVs, 3 ground stations."""
    nodes = []
    for p in range(planes):
        for s in range(sats_per_plane):
            slot = OrbitSlot(altitude_km, KUIPER_INCLINATION_DEG, 360.0 * p / planes, 360.0 * s / sats_per_plane)
            nodes.append(NodeSpec(f"sat-{p}-{s}", NodeKind.SPACE, CAPACITY_BY_KIND[NodeKind.SPACE], MEMORY_GB, slot))

    half = box_km / 2.0
    horizon, step = 36000.0, 600.0
    radius_km = 0.15 * half
    # patrol centres spread over the box
    centres = [(0.45, -0.40), (-0.45, -0.25), (0.10, 0.35), (0.50, 0.30), (-0.35, 0.20)]
    for u in range(uav_count):
        cn, ce = centres[u % len(centres)]
        phase0 = 2.0 * math.pi * u / uav_count
        wps = []
        for k in range(int(horizon / step) + 1):
            t = k * step
            ang = phase0 + 2.0 * math.pi * t / uav_loop_period_s
            lat, lon = _box_offset(center, cn * half + radius_km * math.cos(ang), ce * half + radius_km * math.sin(ang))
            wps.append((t, lat, lon, uav_altitude_km))
        nodes.append(NodeSpec(f"uav-{u}", NodeKind.AIR, CAPACITY_BY_KIND[NodeKind.AIR], MEMORY_GB,
                              WaypointTrajectory(tuple(wps))))

    for g, (n_km, e_km) in enumerate([(0.60 * half, -0.55 * half), (-0.50 * half, -0.35 * half),
                                      (0.10 * half, 0.85 * half)]):
        lat, lon = _box_offset(center, n_km, e_km)
        nodes.append(NodeSpec(f"gs-{g}", NodeKind.GROUND, CAPACITY_BY_KIND[NodeKind.GROUND], MEMORY_GB,
                              FixedGeodetic(lat, lon, 0.0)))

    sc = Scenario(nodes=tuple(nodes), horizon_s=horizon, snapshot_interval_s=step)
    validate_scenario(sc)
    return sc
