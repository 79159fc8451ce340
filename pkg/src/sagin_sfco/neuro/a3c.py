"""Asynchronous advantage actor-critic training.

The master owns the parameters and applies gradient batches with plain SGD
(separate actor and critic learning rates). Workers replay seeded workloads
through the simulator against private ledgers, accumulate gradients over
at least ``batch_size`` transitions, ship them to the master and receive a
fresh parameter copy. With ``workers=1`` everything runs in-process and is
bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import csv
import logging
import multiprocessing as mp
from dataclasses import dataclass, field
from multiprocessing.connection import wait
from pathlib import Path

import numpy as np

from ..geokinetics import SnapshotSeries
from ..harness import run_simulation
from ..scenario import Scenario
from ..workload import WorkloadConfig, generate_requests
from .agent import LearningPolicy, Trajectory
from .checkpoint import save_checkpoint
from .model import PARAM_ORDER, PolicyModel, backward, forward, step_losses

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class A3CConfig:
    lr_actor: float = 0.0025
    lr_critic: float = 0.0005
    gamma: float = 0.95
    entropy_coef: float = 0.01
    batch_size: int = 64
    clip_norm: float = 5.0
    moving_average: int = 100
    checkpoint_every: int = 1000


def discounted_returns(rewards, gamma: float, bootstrap: float = 0.0) -> list[float]:
    out = []
    g = bootstrap
    for r in reversed(list(rewards)):
        g = r + gamma * g
        out.append(g)
    return out[::-1]


def _zeros_like(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def trajectory_gradients(params, traj: Trajectory, gamma: float, entropy_coef: float):
    """Summed actor-loss and critic-loss gradients over a finished trajectory."""
    g_actor, g_critic = _zeros_like(params), _zeros_like(params)
    stats = {"actor_loss": 0.0, "critic_loss": 0.0, "entropy": 0.0}
    returns = discounted_returns(traj.rewards, gamma)
    for step, ret in zip(traj.steps, returns):
        cache = forward(params, step.features, step.adjacency)
        advantage = ret - cache.value
        a_loss, c_loss, ent, d_scores, d_value = step_losses(cache, step.mask, step.action, advantage, ret,
                                                             entropy_coef)
        ga = backward(params, cache, d_scores, 0.0)
        gc = backward(params, cache, np.zeros_like(d_scores), d_value)
        for k in PARAM_ORDER:
            g_actor[k] += ga[k]
            g_critic[k] += gc[k]
        stats["actor_loss"] += a_loss
        stats["critic_loss"] += c_loss
        stats["entropy"] += ent
    return g_actor, g_critic, stats


def clip_by_global_norm(grads: dict, max_norm: float) -> tuple[dict, float]:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm > 0:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return grads, norm


class Master:
    """Central parameter store with gradient accumulators."""

    def __init__(self, model: PolicyModel, config: A3CConfig | None = None):
        self.model = model
        self.config = config or A3CConfig()
        self.version = 0
        self.pending = 0
        self._acc_actor = _zeros_like(model.params)
        self._acc_critic = _zeros_like(model.params)

    def apply_gradients(self, g_actor: dict, g_critic: dict) -> int:
        cfg = self.config
        g_actor, _ = clip_by_global_norm(g_actor, cfg.clip_norm)
        g_critic, _ = clip_by_global_norm(g_critic, cfg.clip_norm)
        for k in PARAM_ORDER:
            self.model.params[k] -= cfg.lr_actor * g_actor[k] + cfg.lr_critic * g_critic[k]
        if not self.model.is_finite():
            raise FloatingPointError("non-finite parameter after update")
        self.version += 1
        return self.version

    def accumulate(self, g_actor: dict, g_critic: dict, transitions: int) -> int:
        for k in PARAM_ORDER:
            self._acc_actor[k] += g_actor[k]
            self._acc_critic[k] += g_critic[k]
        self.model.grads = {k: self._acc_actor[k] + self._acc_critic[k] for k in PARAM_ORDER}
        self.pending += transitions
        if self.pending >= self.config.batch_size:
            self.apply_gradients(self._acc_actor, self._acc_critic)
            self._acc_actor = _zeros_like(self.model.params)
            self._acc_critic = _zeros_like(self.model.params)
            self.model.zero_grads()
            self.pending = 0
        return self.version


def a3c_update(master: Master, trajectory: Trajectory, worker_params: dict | None = None) -> int:
    """Fold one finished trajectory into the master; applies once a batch is full.

    Gradients are evaluated at ``worker_params`` (the copy the worker acted
    with), defaulting to the master's own parameters.
    """
    params = worker_params if worker_params is not None else master.model.params
    cfg = master.config
    g_a, g_c, _ = trajectory_gradients(params, trajectory, cfg.gamma, cfg.entropy_coef)
    return master.accumulate(g_a, g_c, len(trajectory.steps))


# -- training driver ----------------------------------------------------------------


@dataclass
class TrainResult:
    model: PolicyModel
    curve: list = field(default_factory=list)  # rows: episode, reward, moving_avg_reward, losses
    episodes: int = 0
    versions: int = 0
    checkpoints: list = field(default_factory=list)

    def moving_average(self) -> list[float]:
        return [row["moving_avg_reward"] for row in self.curve]

    def rewards(self) -> list[float]:
        return [row["reward"] for row in self.curve]

    def write_curve(self, path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        cols = ["episode", "reward", "moving_avg_reward", "actor_loss", "critic_loss", "entropy"]
        with p.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for row in self.curve:
                w.writerow({k: (f"{row[k]:.9g}" if isinstance(row[k], float) else row[k]) for k in cols})
        return p


class _BudgetReached(Exception):
    pass


class _CurveRecorder:
    def __init__(self, window: int):
        self.window = window
        self.rows = []
        self._recent = []

    def add(self, reward: float, stats: dict, steps: int):
        self._recent.append(reward)
        if len(self._recent) > self.window:
            self._recent.pop(0)
        n = max(1, steps)
        self.rows.append({"episode": len(self.rows) + 1, "reward": float(reward),
                          "moving_avg_reward": float(np.mean(self._recent)),
                          "actor_loss": float(stats["actor_loss"]) / n,
                          "critic_loss": float(stats["critic_loss"]) / n, "entropy": float(stats["entropy"]) / n})


def _replay_seed(seed: int, worker: int, replay: int) -> int:
    return int(np.random.SeedSequence([seed, worker, replay]).generate_state(1)[0])


def _worker_loop(scenario, workload_config, series, seed, worker_id, model, sink, version_of):
    policy = LearningPolicy(model, sink, seed=_replay_seed(seed, worker_id, 2**31))
    replay = 0
    while True:
        rs = _replay_seed(seed, worker_id, replay)
        requests = generate_requests(workload_config.with_seed(rs), scenario.horizon_s)
        policy.version = version_of()
        run_simulation(scenario, requests, policy, rs, "dynamic", series=series)
        replay += 1


def _train_single(scenario, workload_config, episodes_budget, seed, config, series, checkpoint_dir):
    model = PolicyModel.initialize(seed)
    master = Master(model, config)
    curve = _CurveRecorder(config.moving_average)
    result = TrainResult(model)

    def sink(traj: Trajectory):
        g_a, g_c, stats = trajectory_gradients(model.params, traj, config.gamma, config.entropy_coef)
        curve.add(traj.total_reward(), stats, len(traj.steps))
        master.accumulate(g_a, g_c, len(traj.steps))
        n = len(curve.rows)
        if checkpoint_dir is not None and n % config.checkpoint_every == 0:
            result.checkpoints.append(save_checkpoint(Path(checkpoint_dir) / f"ckpt_{n:07d}.bin", model, seed, n))
        if n >= episodes_budget:
            raise _BudgetReached

    try:
        _worker_loop(scenario, workload_config, series, seed, 0, model, sink, lambda: master.version)
    except _BudgetReached:
        pass
    result.curve = curve.rows
    result.episodes = len(curve.rows)
    result.versions = master.version
    return result


def _process_worker(worker_id, scenario, workload_config, seed, params, conn, config):
    series = SnapshotSeries(scenario)
    model = PolicyModel({k: v.copy() for k, v in params.items()})
    state = {"version": 0, "ga": _zeros_like(model.params), "gc": _zeros_like(model.params), "n": 0,
             "episodes": []}

    def sink(traj: Trajectory):
        g_a, g_c, stats = trajectory_gradients(model.params, traj, config.gamma, config.entropy_coef)
        for k in PARAM_ORDER:
            state["ga"][k] += g_a[k]
            state["gc"][k] += g_c[k]
        state["n"] += len(traj.steps)
        state["episodes"].append((traj.total_reward(), stats, len(traj.steps)))
        if state["n"] >= config.batch_size:
            conn.send(("grads", worker_id, state["ga"], state["gc"], state["n"], state["episodes"],
                       state["version"]))
            reply = conn.recv()
            if reply is None:
                raise _BudgetReached
            new_params, state["version"] = reply
            for k in PARAM_ORDER:
                model.params[k][...] = new_params[k]
            state.update(ga=_zeros_like(model.params), gc=_zeros_like(model.params), n=0, episodes=[])

    try:
        _worker_loop(scenario, workload_config, series, seed, worker_id, model, sink, lambda: state["version"])
    except _BudgetReached:
        pass
    finally:
        conn.close()


def _train_parallel(scenario, workload_config, workers, episodes_budget, seed, config, checkpoint_dir):
    model = PolicyModel.initialize(seed)
    master = Master(model, config)
    curve = _CurveRecorder(config.moving_average)
    result = TrainResult(model)
    ctx = mp.get_context("fork")
    conns, procs = [], []
    for w in range(workers):
        parent, child = ctx.Pipe()
        p = ctx.Process(target=_process_worker,
                        args=(w, scenario, workload_config, seed, model.params, child, config), daemon=True)
        p.start()
        child.close()
        conns.append(parent)
        procs.append(p)
    live = set(range(workers))
    next_ckpt = config.checkpoint_every
    try:
        while live:
            for conn in wait([conns[w] for w in live]):
                w = conns.index(conn)
                try:
                    msg = conn.recv()
                except EOFError:
                    live.discard(w)
                    continue
                _, wid, g_a, g_c, _n, episodes, _version = msg
                master.apply_gradients(g_a, g_c)
                for reward, stats, steps in episodes:
                    if len(curve.rows) < episodes_budget:
                        curve.add(reward, stats, steps)
                while checkpoint_dir is not None and len(curve.rows) >= next_ckpt:
                    result.checkpoints.append(save_checkpoint(Path(checkpoint_dir) / f"ckpt_{next_ckpt:07d}.bin",
                                                              model, seed, next_ckpt))
                    next_ckpt += config.checkpoint_every
                if len(curve.rows) >= episodes_budget:
                    conn.send(None)
                    live.discard(w)
                else:
                    conn.send(({k: v.copy() for k, v in model.params.items()}, master.version))
    finally:
        for p in procs:
            p.join(timeout=30)
            if p.is_alive():
                p.terminate()
    result.curve = curve.rows
    result.episodes = len(curve.rows)
    result.versions = master.version
    return result


def train(scenario: Scenario, workload_config: WorkloadConfig | None = None, workers: int = 4,
          episodes_budget: int = 1000, seed: int = 0, *, config: A3CConfig | None = None,
          series: SnapshotSeries | None = None, checkpoint_dir=None) -> TrainResult:
    """Train the placement policy; returns the master model and the learning curve."""
    if episodes_budget < 1:
        raise ValueError("episodes_budget must be >= 1")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    config = config or A3CConfig()
    workload_config = workload_config or WorkloadConfig()
    if workers == 1:
        series = series or SnapshotSeries(scenario)
        return _train_single(scenario, workload_config, episodes_budget, seed, config, series, checkpoint_dir)
    return _train_parallel(scenario, workload_config, workers, episodes_budget, seed, config, checkpoint_dir)
