"""Discrete-event simulation loop, metrics and comparison runs.

Event order at equal timestamps: snapshot change, then departures, then
arrivals, so capacity freed by a departure is visible to a same-instant
arrival. Series are sampled at the end of each snapshot interval. After the
horizon no arrivals or topology changes occur; remaining services run out
their lifetimes on the final snapshot so every request gets one outcome.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import math
import statistics
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import ConfigError, InsufficientNodeResources, NoPath, SlaViolated
from .geokinetics import SnapshotSeries
from .policies import PlacementProblem, Policy
from .scenario import Scenario
from .substrate import (
    AbortReason,
    MigrationStatus,
    SubstrateLedger,
    admit,
    release,
    revalidate_and_migrate,
)

_SAMPLE, _SNAPSHOT, _DEPARTURE, _ARRIVAL = -1, 0, 1, 2


class Outcome(str, Enum):
    COMPLETED = "Completed"
    REJECTED_NODE_RESOURCES = "RejectedNodeResources"
    REJECTED_NO_PATH = "RejectedNoPath"
    REJECTED_SLA = "RejectedSla"
    ABORTED_LINK_LOST = "AbortedLinkLost"
    ABORTED_NODE_LOST = "AbortedNodeLost"

    @property
    def admitted(self) -> bool:
        return self in (Outcome.COMPLETED, Outcome.ABORTED_LINK_LOST, Outcome.ABORTED_NODE_LOST)


OUTCOME_ORDER = list(Outcome)


@dataclass(frozen=True)
class OutcomeRecord:
    request_id: int
    traffic_class: str
    outcome: Outcome
    admitted_t: float | None
    ended_t: float
    migration_count: int = 0


@dataclass
class MetricsReport:
    policy: str
    seed: int
    mode: str
    scenario_hash: str
    horizon_s: float
    interval_s: float
    # per snapshot: (t_index, time_h, active, admitted_cum, completed_cum, aborted_cum)
    samples: list = field(default_factory=list)
    outcomes: list = field(default_factory=list)
    migrations: int = 0

    @property
    def total_requests(self) -> int:
        return len(self.outcomes)

    def histogram(self, by_horizon: bool = False) -> dict:
        counts = {o: 0 for o in OUTCOME_ORDER}
        for rec in self.outcomes:
            if not by_horizon or rec.ended_t <= self.horizon_s:
                counts[rec.outcome] += 1
        return counts

    @property
    def admitted_count(self) -> int:
        return sum(1 for r in self.outcomes if r.outcome.admitted)

    @property
    def acceptance_ratio(self) -> float:
        return self.admitted_count / self.total_requests if self.outcomes else 0.0

    @property
    def completion_ratio(self) -> float:
        done = sum(1 for r in self.outcomes if r.outcome is Outcome.COMPLETED)
        return done / self.total_requests if self.outcomes else 0.0

    @property
    def mean_migrations(self) -> float:
        admitted = self.admitted_count
        return self.migrations / admitted if admitted else 0.0

    @property
    def active_series(self) -> list[int]:
        return [s[2] for s in self.samples]

    @property
    def revenue_series(self) -> list[float]:
        return long_term_revenue([s[4] for s in self.samples], [s[1] for s in self.samples])

    @property
    def final_revenue(self) -> float:
        rev = self.revenue_series
        return rev[-1] if rev else 0.0

    @property
    def aborted_count(self) -> int:
        return sum(1 for r in self.outcomes if r.outcome in (Outcome.ABORTED_LINK_LOST, Outcome.ABORTED_NODE_LOST))

    def summary(self) -> dict:
        return {"policy": self.policy, "seed": self.seed, "mode": self.mode, "scenario": self.scenario_hash,
                "requests": self.total_requests, "acceptance_ratio": self.acceptance_ratio,
                "completion_ratio": self.completion_ratio, "final_revenue_per_h": self.final_revenue,
                "migrations": self.migrations, "mean_migrations": self.mean_migrations,
                "aborted": self.aborted_count,
                "histogram": {o.value: c for o, c in self.histogram().items()}}

    def to_json(self) -> str:
        doc = self.summary()
        doc["samples"] = [list(s) for s in self.samples]
        doc["outcomes"] = [[r.request_id, r.traffic_class, r.outcome.value, r.admitted_t, r.ended_t,
                            r.migration_count] for r in self.outcomes]
        return json.dumps(doc, sort_keys=True)


def long_term_revenue(completed_cumulative, elapsed_hours) -> list[float]:
    """Completed services per hour at each sample point."""
    out = []
    for c, h in zip(completed_cumulative, elapsed_hours):
        if h <= 0:
            raise ValueError("elapsed_hours must be positive at every sample point")
        out.append(c / h)
    return out


class _Observer:
    """Hook points for training and invariant checks; the default does nothing."""

    def after_event(self, ledger, kind):
        pass

    def on_admit_failed(self, ledger, before_digest):
        pass


class InvariantChecker(_Observer):
    def __init__(self):
        self.events = 0
        self.failed_admits = 0

    def after_event(self, ledger, kind):
        ledger.check_conservation()
        self.events += 1

    def on_admit_failed(self, ledger, before_digest):
        assert ledger.digest() == before_digest, "failed admission modified the ledger"
        self.failed_admits += 1


def run_simulation(scenario: Scenario, workload, policy: Policy, seed: int = 0, mode: str = "dynamic", *,
                   series: SnapshotSeries | None = None, static_index: int = 0, observer=None) -> MetricsReport:
    if mode not in ("dynamic", "static"):
        raise ConfigError(f"mode must be 'dynamic' or 'static', not {mode!r}")
    horizon = scenario.horizon_s
    for r in workload:
        if not 0 <= r.arrival_time_s < horizon:
            raise ConfigError(f"request {r.id} arrives at {r.arrival_time_s} s, outside [0, {horizon})")
    series = series or SnapshotSeries(scenario)
    observer = observer or _Observer()
    count, interval = scenario.snapshot_count, scenario.snapshot_interval_s
    policy.reset(seed)

    def topo(k):
        return series.actual(static_index if mode == "static" else k)

    def context(k):
        if mode == "static":
            return series.tag(static_index), series.actual(static_index)
        return series.tag(k), series.predicted(k + 1)

    ledger = SubstrateLedger(scenario, topo(0))
    report = MetricsReport(policy.name, seed, mode, scenario.digest(), horizon, interval)

    events = []
    seq = 0

    def push(t, prio, payload):
        nonlocal seq
        heapq.heappush(events, (t, prio, seq, payload))
        seq += 1

    for k in range(count):
        push((k + 1) * interval, _SAMPLE, k)
        if k > 0:
            push(k * interval, _SNAPSHOT, k)
    for r in workload:
        push(r.arrival_time_s, _ARRIVAL, r)

    admitted = completed = aborted = 0
    admitted_at: dict = {}
    records: dict = {}
    current_k = 0

    def finish(rid, outcome, t, migrations):
        req = requests[rid]
        records[rid] = OutcomeRecord(rid, req.traffic_class.value, outcome, admitted_at.get(rid), t, migrations)

    requests = {r.id: r for r in workload}
    while events:
        t, prio, _, payload = heapq.heappop(events)
        if prio == _SAMPLE:
            k = payload
            report.samples.append((k, round((k + 1) * interval / 3600.0, 9), admitted - completed - aborted,
                                   admitted, completed, aborted))
            continue
        if prio == _SNAPSHOT:
            current_k = payload
            if mode == "dynamic":
                outcomes = revalidate_and_migrate(ledger, topo(current_k), policy, tag=series.tag(current_k),
                                                  predicted=series.predicted(current_k + 1))
                for mo in outcomes:
                    if mo.status in (MigrationStatus.REROUTED, MigrationStatus.MIGRATED):
                        report.migrations += 1
                    elif mo.status is MigrationStatus.ABORTED:
                        aborted += 1
                        kind = (Outcome.ABORTED_NODE_LOST if mo.reason is AbortReason.NODE_LOST
                                else Outcome.ABORTED_LINK_LOST)
                        finish(mo.request_id, kind, t, mo.embedding.migration_count)
            observer.after_event(ledger, "snapshot")
            continue
        if prio == _DEPARTURE:
            rid = payload
            emb = ledger.embeddings.get(rid)
            if emb is not None:
                release(ledger, rid)
                completed += 1
                finish(rid, Outcome.COMPLETED, t, emb.migration_count)
                observer.after_event(ledger, "departure")
            continue

        req = payload
        tag, predicted = context(current_k)
        problem = PlacementProblem(req, ledger.snapshot, ledger, tag, predicted)
        before = ledger.digest() if isinstance(observer, InvariantChecker) else None
        decision = policy.place(problem)
        outcome = None
        if decision.rejected:
            outcome = Outcome.REJECTED_NODE_RESOURCES
        else:
            try:
                admit(ledger, ledger.snapshot, req, decision.assignment)
            except InsufficientNodeResources:
                outcome = Outcome.REJECTED_NODE_RESOURCES
            except NoPath:
                outcome = Outcome.REJECTED_NO_PATH
            except SlaViolated:
                outcome = Outcome.REJECTED_SLA
        feedback = getattr(policy, "feedback", None)
        if feedback is not None:
            feedback(problem, decision, outcome, ledger)
        if outcome is None:
            admitted += 1
            admitted_at[req.id] = t
            push(t + req.lifetime_s, _DEPARTURE, req.id)
        else:
            observer.on_admit_failed(ledger, before)
            finish(req.id, outcome, t, 0)
        observer.after_event(ledger, "arrival")

    report.outcomes = [records[r.id] for r in sorted(workload, key=lambda r: r.id)]
    return report


# -- comparison ---------------------------------------------------------------------


def _mean_std(values):
    if not values:
        return 0.0, 0.0
    return statistics.fmean(values), (statistics.pstdev(values) if len(values) > 1 else 0.0)


SUMMARY_COLUMNS = ["policy", "runs", "acceptance_mean", "acceptance_std", "completion_mean", "completion_std",
                   "revenue_mean", "revenue_std", "migrations_mean"]
RUN_COLUMNS = ["policy", "seed", "mode", "requests", "acceptance_ratio", "completion_ratio",
               "final_revenue_per_h", "migrations", "aborted"]


def compare(scenario: Scenario, workload, policies, seeds, *, mode: str = "dynamic",
            series: SnapshotSeries | None = None, out_dir=None) -> dict:
    """Run every (policy, seed) pair.

    ``workload`` is either one request list replayed for every seed or a
    callable ``seed -> requests`` giving each seed its own stream (shared by
    all policies). ``policies`` maps a display label to a zero-argument
    factory returning a fresh :class:`Policy`. Returns
    ``{"runs": [...], "summary": [...], "reports": [...]}``.
    """
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("compare needs at least one seed")
    series = series or SnapshotSeries(scenario)
    reports, runs, summary = [], [], []
    streams = {seed: (workload(seed) if callable(workload) else workload) for seed in seeds}
    for label, factory in policies.items():
        per_policy = []
        for seed in seeds:
            rep = run_simulation(scenario, streams[seed], factory(), seed, mode, series=series)
            rep.policy = label
            reports.append(rep)
            per_policy.append(rep)
            runs.append({"policy": label, "seed": seed, "mode": mode, "requests": rep.total_requests,
                         "acceptance_ratio": rep.acceptance_ratio, "completion_ratio": rep.completion_ratio,
                         "final_revenue_per_h": rep.final_revenue, "migrations": rep.migrations,
                         "aborted": rep.aborted_count})
        acc = _mean_std([r.acceptance_ratio for r in per_policy])
        comp = _mean_std([r.completion_ratio for r in per_policy])
        rev = _mean_std([r.final_revenue for r in per_policy])
        summary.append({"policy": label, "runs": len(per_policy), "acceptance_mean": acc[0],
                        "acceptance_std": acc[1], "completion_mean": comp[0], "completion_std": comp[1],
                        "revenue_mean": rev[0], "revenue_std": rev[1],
                        "migrations_mean": statistics.fmean(r.migrations for r in per_policy)})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "runs.csv", RUN_COLUMNS, runs)
        _write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    return {"runs": runs, "summary": summary, "reports": reports}


# -- CSV export ---------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.9g}" if math.isfinite(v) else str(v)
    return v


def _write_csv(path: Path, columns, rows) -> Path:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row[k]) for k in columns})
    try:
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc
    return path


OUTCOME_COLUMNS = ["policy", "seed", "mode", "outcome", "count", "count_by_horizon"]
ACTIVE_COLUMNS = ["policy", "seed", "mode", "t_index", "time_h", "active_sfcs"]
REVENUE_COLUMNS = ["policy", "seed", "mode", "t_index", "time_h", "completed_cumulative", "revenue_per_h"]


def export_plot_data(reports, out_dir) -> dict:
    """Write the three panel files: outcome histogram, active SFC series, revenue series."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOError(f"cannot create {out}: {exc}") from exc
    outcome_rows, active_rows, revenue_rows = [], [], []
    for rep in reports:
        tag = {"policy": rep.policy, "seed": rep.seed, "mode": rep.mode}
        full, by_h = rep.histogram(), rep.histogram(by_horizon=True)
        for o in OUTCOME_ORDER:
            outcome_rows.append({**tag, "outcome": o.value, "count": full[o], "count_by_horizon": by_h[o]})
        for (k, h, active, _adm, comp, _ab), rev in zip(rep.samples, rep.revenue_series):
            active_rows.append({**tag, "t_index": k, "time_h": h, "active_sfcs": active})
            revenue_rows.append({**tag, "t_index": k, "time_h": h, "completed_cumulative": comp,
                                 "revenue_per_h": rev})
    return {
        "outcomes": _write_csv(out / "outcomes.csv", OUTCOME_COLUMNS, outcome_rows),
        "active": _write_csv(out / "active_sfcs.csv", ACTIVE_COLUMNS, active_rows),
        "revenue": _write_csv(out / "revenue.csv", REVENUE_COLUMNS, revenue_rows),
    }
