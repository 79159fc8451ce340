"""Seeded SFC request streams mixing URLLC, mMTC and eMBB traffic."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .scenario import SfcRequest, SlaProfile, TrafficClass


@dataclass(frozen=True)
class ClassProfile:
    chain_length: tuple[int, int]
    compute_mbps: tuple[float, float]
    memory_gb: tuple[float, float]
    vlink_mbps: tuple[float, float]
    lifetime_s: tuple[float, float]
    max_latency_ms: float
    burst_sigma_mb: float = 0.1


DEFAULT_PROFILES = {
    TrafficClass.URLLC: ClassProfile((2, 3), (10, 50), (1, 4), (5, 20), (600, 1800), 20.0),
    TrafficClass.EMBB: ClassProfile((3, 5), (50, 200), (2, 8), (20, 50), (1800, 7200), 100.0),
    TrafficClass.MMTC: ClassProfile((2, 4), (5, 20), (1, 2), (1, 10), (3600, 14400), 500.0),
}

CLASS_ORDER = (TrafficClass.URLLC, TrafficClass.MMTC, TrafficClass.EMBB)


@dataclass(frozen=True)
class WorkloadConfig:
    arrival_rate_per_min: float = 0.5
    class_mix: tuple[float, float, float] = (0.3, 0.4, 0.3)  # URLLC, mMTC, eMBB
    profiles: dict = field(default_factory=lambda: dict(DEFAULT_PROFILES))
    rng_seed: int = 0
    # optional attachment points; empty means requests float freely
    ingress_candidates: tuple[str, ...] = ()
    egress_candidates: tuple[str, ...] = ()

    def validate(self):
        if self.arrival_rate_per_min < 0 or not math.isfinite(self.arrival_rate_per_min):
            raise ConfigError("arrival_rate_per_min must be a finite non-negative number")
        if len(self.class_mix) != 3 or any(p < 0 for p in self.class_mix):
            raise ConfigError("class_mix must be three non-negative probabilities")
        if abs(sum(self.class_mix) - 1.0) > 1e-9:
            raise ConfigError(f"class_mix sums to {sum(self.class_mix)}, expected 1")
        for cls in CLASS_ORDER:
            p = self.profiles.get(cls)
            if p is None:
                raise ConfigError(f"missing profile for {cls.value}")
            for name in ("chain_length", "compute_mbps", "memory_gb", "vlink_mbps", "lifetime_s"):
                lo, hi = getattr(p, name)
                if not (0 < lo <= hi):
                    raise ConfigError(f"{cls.value}.{name} range ({lo}, {hi}) must be positive and non-empty")
            if p.max_latency_ms <= 0 or p.burst_sigma_mb < 0:
                raise ConfigError(f"{cls.value} SLA values out of range")

    def with_seed(self, seed: int) -> "WorkloadConfig":
        return replace(self, rng_seed=int(seed))


def generate_requests(config: WorkloadConfig, horizon_s: float) -> list[SfcRequest]:
    """Poisson arrivals over ``[0, horizon_s)``; one seeded generator drives everything."""
    if not horizon_s > 0:
        raise ConfigError("horizon_s must be positive")
    config.validate()
    rate_per_s = config.arrival_rate_per_min / 60.0
    if rate_per_s == 0:
        return []
    rng = np.random.default_rng(config.rng_seed)
    times = []
    t = rng.exponential(1.0 / rate_per_s)
    while t < horizon_s:
        times.append(float(t))
        t += rng.exponential(1.0 / rate_per_s)

    requests = []
    for rid, t in enumerate(times):
        cls = CLASS_ORDER[int(rng.choice(3, p=config.class_mix))]
        p = config.profiles[cls]
        n = int(rng.integers(p.chain_length[0], p.chain_length[1] + 1))
        vnfs = tuple((round(float(rng.uniform(*p.compute_mbps)), 1), round(float(rng.uniform(*p.memory_gb)), 2))
                     for _ in range(n))
        vlinks = tuple(round(float(rng.uniform(*p.vlink_mbps)), 1) for _ in range(n - 1))
        lifetime = round(float(rng.uniform(*p.lifetime_s)), 3)
        ingress = str(rng.choice(config.ingress_candidates)) if config.ingress_candidates else None
        egress = str(rng.choice(config.egress_candidates)) if config.egress_candidates else None
        requests.append(SfcRequest(rid, t, lifetime, vnfs, vlinks,
                                   SlaProfile(cls, p.max_latency_ms, p.burst_sigma_mb), ingress, egress))
    return requests


# -- workload.json ---------------------------------------------------------------


def request_to_dict(r: SfcRequest) -> dict:
    return {
        "id": r.id,
        "arrival_time_s": r.arrival_time_s,
        "lifetime_s": r.lifetime_s,
        "vnfs": [{"compute_mbps": c, "memory_gb": m} for c, m in r.vnfs],
        "vlinks_mbps": list(r.vlinks),
        "sla": {"class": r.sla.traffic_class.value, "max_latency_ms": r.sla.max_latency_ms,
                "burst_sigma_mb": r.sla.burst_sigma_mb},
        "ingress_node": r.ingress_node,
        "egress_node": r.egress_node,
    }


def request_from_dict(d: dict) -> SfcRequest:
    sla = d["sla"]
    return SfcRequest(
        int(d["id"]), float(d["arrival_time_s"]), float(d["lifetime_s"]),
        tuple((float(v["compute_mbps"]), float(v["memory_gb"])) for v in d["vnfs"]),
        tuple(float(b) for b in d["vlinks_mbps"]),
        SlaProfile(TrafficClass(sla["class"]), float(sla["max_latency_ms"]), float(sla.get("burst_sigma_mb", 0.1))),
        d.get("ingress_node"), d.get("egress_node"),
    )


def dumps_workload(requests, *, config: WorkloadConfig | None = None, horizon_s: float | None = None) -> str:
    doc = {"schema": "sagin-workload/1", "horizon_s": horizon_s,
           "rng_seed": None if config is None else config.rng_seed,
           "requests": [request_to_dict(r) for r in requests]}
    return json.dumps(doc, indent=1) + "\n"


def save_workload(requests, path, *, config: WorkloadConfig | None = None, horizon_s: float | None = None):
    Path(path).write_text(dumps_workload(requests, config=config, horizon_s=horizon_s))


def load_workload(path) -> list[SfcRequest]:
    try:
        doc = json.loads(Path(path).read_text())
        reqs = [request_from_dict(d) for d in doc["requests"]]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return sorted(reqs, key=lambda r: (r.arrival_time_s, r.id))
