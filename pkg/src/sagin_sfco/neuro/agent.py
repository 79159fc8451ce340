"""Sequential VNF placement with the actor-critic model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..errors import InsufficientNodeResources, NoFeasibleAction, NoPath, SlaViolated
from ..policies import PlacementDecision, Policy
from ..substrate import admit
from .features import GraphContext, hops_per_step, step_features
from .model import PolicyModel, forward, masked_log_softmax

TERMINAL_SUCCESS = 1.0
TERMINAL_FAILURE = -1.0
HOP_PENALTY = 0.01


@dataclass
class Transition:
    features: np.ndarray
    adjacency: np.ndarray
    mask: np.ndarray
    action: int
    value: float
    log_prob: float
    reward: float = 0.0


@dataclass
class Trajectory:
    request_id: int
    model_version: int
    steps: list = field(default_factory=list)
    terminal: bool = False
    # reward of an episode that ended before any action could be taken
    empty_reward: float = 0.0

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    def total_reward(self) -> float:
        return sum(self.rewards) + self.empty_reward


class StepResult(NamedTuple):
    node: str
    log_prob: float
    value: float


def _decide(model: PolicyModel, x, adjacency, mask, rng, greedy: bool):
    if not mask.any():
        raise NoFeasibleAction("every node is masked")
    cache = forward(model.params, x, adjacency)
    logp = masked_log_softmax(cache.scores, mask)
    if greedy:
        # ties resolve to the lowest node index
        action = int(np.argmax(np.where(mask, cache.scores, -np.inf)))
    else:
        p = np.where(mask, np.exp(logp), 0.0)
        p /= p.sum()
        action = int(rng.choice(len(p), p=p))
    return action, float(logp[action]), cache.value


def policy_step(model: PolicyModel, problem, vnf_index: int, seed=None, *, greedy: bool = False,
                hosts: dict | None = None, ctx: GraphContext | None = None) -> StepResult:
    """Choose the host of one VNF. ``hosts`` maps already-placed VNF indices to nodes."""
    ctx = ctx or GraphContext(problem)
    hosts = dict(problem.fixed) if hosts is None else hosts
    x, mask = step_features(ctx, problem.request, vnf_index, hosts)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    action, logp, value = _decide(model, x, ctx.adjacency, mask, rng, greedy)
    return StepResult(ctx.nodes[action], logp, value)


def place_sequentially(model: PolicyModel, problem, rng, greedy: bool, trajectory: Trajectory | None = None):
    """Run the chain's placement steps; returns the assignment or None when a step has no action."""
    ctx = GraphContext(problem)
    hosts = dict(problem.fixed)
    for i in problem.free_indices:
        x, mask = step_features(ctx, problem.request, i, hosts)
        try:
            action, logp, value = _decide(model, x, ctx.adjacency, mask, rng, greedy)
        except NoFeasibleAction:
            return None
        if trajectory is not None:
            trajectory.steps.append(Transition(x, ctx.adjacency, mask, action, value, logp))
        hosts[i] = ctx.nodes[action]
    return tuple(hosts[i] for i in range(len(problem.request.vnfs)))


def assign_rewards(trajectory: Trajectory, embedding=None) -> Trajectory:
    """Terminal +1 and -0.01 per routed hop on success; -1 on any failure."""
    steps = trajectory.steps
    if embedding is not None:
        # arrival episodes place every VNF, so step k is VNF k
        for s, hops in zip(steps, hops_per_step(embedding)):
            s.reward = -HOP_PENALTY * hops
        if steps:
            steps[-1].reward += TERMINAL_SUCCESS
        else:
            trajectory.empty_reward = TERMINAL_SUCCESS
    else:
        for s in steps:
            s.reward = 0.0
        if steps:
            steps[-1].reward = TERMINAL_FAILURE
        else:
            trajectory.empty_reward = TERMINAL_FAILURE
    trajectory.terminal = True
    return trajectory


def a3c_worker_episode(problem, model: PolicyModel, model_version: int = 0, rng=None, *,
                       commit: bool = False) -> Trajectory:
    """One placement episode for ``problem.request``.

    Admission runs against a copy of the ledger unless ``commit`` is set.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    traj = Trajectory(problem.request.id, model_version)
    assignment = place_sequentially(model, problem, rng, greedy=False, trajectory=traj)
    if assignment is None:
        return assign_rewards(traj)
    ledger = problem.ledger if commit else problem.ledger.copy()
    try:
        emb = admit(ledger, problem.snapshot, problem.request, assignment)
    except (InsufficientNodeResources, NoPath, SlaViolated):
        return assign_rewards(traj)
    return assign_rewards(traj, emb)


class RLPolicy(Policy):
    """Evaluation policy: argmax decoding with frozen parameters."""

    name = "rl"

    def __init__(self, model: PolicyModel, greedy: bool = True, seed: int = 0):
        self.model = model
        self.greedy = greedy
        self.reset(seed)

    def reset(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def place(self, problem) -> PlacementDecision:
        assignment = place_sequentially(self.model, problem, self.rng, self.greedy)
        return PlacementDecision.reject() if assignment is None else PlacementDecision(assignment)


class LearningPolicy(Policy):
    """Samples actions on arrivals and hands finished trajectories to ``sink``.

    Migration-time replacements use argmax decoding and are not recorded.
    """

    name = "rl-train"

    def __init__(self, model: PolicyModel, sink, seed: int = 0, version: int = 0):
        self.model = model
        self.sink = sink
        self.version = version
        self.rng = np.random.default_rng(seed)
        self._pending: Trajectory | None = None

    def reset(self, seed: int) -> None:
        # the stream continues across replays so a worker never repeats itself
        pass

    def place(self, problem) -> PlacementDecision:
        if problem.purpose != "arrival":
            assignment = place_sequentially(self.model, problem, self.rng, greedy=True)
        else:
            self._pending = Trajectory(problem.request.id, self.version)
            assignment = place_sequentially(self.model, problem, self.rng, greedy=False, trajectory=self._pending)
        return PlacementDecision.reject() if assignment is None else PlacementDecision(assignment)

    def feedback(self, problem, decision, outcome, ledger) -> None:
        traj, self._pending = self._pending, None
        if traj is None:
            return
        emb = ledger.embeddings.get(problem.request.id) if outcome is None else None
        self.sink(assign_rewards(traj, emb))
