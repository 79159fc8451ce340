import os
import struct
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sagin_sfco.errors import NoFeasibleAction, ParseError, ShapeError
from sagin_sfco.geokinetics import SnapshotSeries
from sagin_sfco.neuro.a3c import (
    A3CConfig,
    Master,
    a3c_update,
    clip_by_global_norm,
    discounted_returns,
    train,
    trajectory_gradients,
)
from sagin_sfco.neuro.agent import (
    HOP_PENALTY,
    RLPolicy,
    Trajectory,
    Transition,
    a3c_worker_episode,
    policy_step,
)
from sagin_sfco.neuro.checkpoint import MAGIC, dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from sagin_sfco.neuro.features import GraphContext, step_features
from sagin_sfco.neuro.model import (
    LEAKY_SLOPE,
    PARAM_ORDER,
    PolicyModel,
    backward,
    forward,
    gat_forward,
    gat_layer_forward,
    masked_log_softmax,
    param_shapes,
    step_losses,
)
from sagin_sfco.policies import PlacementProblem
from sagin_sfco.scenario import FixedGeodetic, NodeKind, NodeSpec, Scenario, WaypointTrajectory
from sagin_sfco.workload import WorkloadConfig
from tests.conftest import A, G, make_request, toy_ledger


def small_params(seed=0, f=10, h=64, scale=0.3):
    rng = np.random.default_rng(seed)
    return {k: rng.normal(0, scale, s) for k, s in param_shapes(f, h).items()}


# -- GAT forward ------------------------------------------------------------------


def reference_layer(x, adj, W, a):
    """Loop-by-loop graph attention layer."""
    n, h = x.shape[0], W.shape[1]
    z = [sum(x[i, f] * W[f] for f in range(x.shape[1])) for i in range(n)]
    out = np.zeros((n, h))
    for i in range(n):
        nbrs = [j for j in range(n) if adj[i][j]]
        logits = []
        for j in nbrs:
            s = sum(a[k] * z[i][k] for k in range(h)) + sum(a[h + k] * z[j][k] for k in range(h))
            logits.append(s if s > 0 else LEAKY_SLOPE * s)
        m = max(logits)
        w = [np.exp(l - m) for l in logits]
        total = sum(w)
        acc = np.zeros(h)
        for wj, j in zip(w, nbrs):
            acc += (wj / total) * z[j]
        out[i] = np.tanh(acc)
    return out


def test_gat_matches_loop_reference_on_line_graph():
    p = small_params(1)
    x = np.random.default_rng(2).uniform(0, 1, (3, 10))
    adj = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=bool)
    ref = reference_layer(reference_layer(x, adj, p["W1"], p["a1"]), adj, p["W2"], p["a2"])
    assert np.max(np.abs(gat_forward(x, adj, p) - ref)) <= 1e-10


def test_gat_single_node():
    p = small_params(3)
    x = np.random.default_rng(0).uniform(0, 1, (1, 10))
    out, cache = gat_layer_forward(x, np.ones((1, 1), bool), p["W1"], p["a1"])
    assert cache.alpha[0, 0] == 1.0
    assert np.allclose(out, np.tanh(x @ p["W1"]))


def test_gat_identical_nodes_identical_rows():
    p = small_params(4)
    row = np.random.default_rng(1).uniform(0, 1, 10)
    out = gat_forward(np.stack([row, row]), np.ones((2, 2), bool), p)
    assert np.array_equal(out[0], out[1])


def test_gat_shape_errors():
    p = small_params()
    with pytest.raises(ShapeError):
        gat_forward(np.zeros((3, 9)), np.eye(3, dtype=bool), p)
    with pytest.raises(ShapeError):
        gat_forward(np.zeros((3, 10)), np.eye(2, dtype=bool), p)
    with pytest.raises(ShapeError):
        gat_forward(np.zeros((2, 10)), np.zeros((2, 2), bool), p)
    with pytest.raises(ShapeError):
        PolicyModel({"W1": np.zeros((3, 3))})


def random_graph(rng, n):
    adj = rng.random((n, n)) < 0.4
    adj = adj | adj.T | np.eye(n, dtype=bool)
    return rng.uniform(0, 1, (n, 10)), adj


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 8))
def test_attention_normalised_and_permutation_equivariant(seed, n):
    rng = np.random.default_rng(seed)
    p = small_params(seed)
    x, adj = random_graph(rng, n)
    _, cache = gat_layer_forward(x, adj, p["W1"], p["a1"])
    assert np.allclose(cache.alpha.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(cache.alpha[~adj] == 0.0)
    perm = rng.permutation(n)
    a = forward(p, x, adj)
    b = forward(p, x[perm], adj[np.ix_(perm, perm)])
    assert np.allclose(a.scores[perm], b.scores, atol=1e-12)
    assert a.value == pytest.approx(b.value, abs=1e-12)


def test_parameter_count_and_init():
    m = PolicyModel.initialize(0)
    assert m.parameter_count == 10 * 64 + 128 + 64 * 64 + 128 + 64 + 1 + 64 + 1
    assert m.is_finite()
    assert PolicyModel.initialize(0).params["W1"].tolist() == m.params["W1"].tolist()


# -- gradients --------------------------------------------------------------------


def total_loss(params, x, adj, mask, action, advantage, ret, beta):
    cache = forward(params, x, adj)
    actor, critic, *_ = step_losses(cache, mask, action, advantage, ret, beta)
    return actor + critic


def test_finite_difference_gradients():
    rng = np.random.default_rng(0)
    p = small_params(7, scale=0.4)
    x = rng.uniform(0, 1, (3, 10))
    adj = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=bool)
    mask = np.array([True, False, True])
    args = (x, adj, mask, 2, 0.7, 0.4, 0.01)
    cache = forward(p, x, adj)
    _, _, _, ds, dv = step_losses(cache, *args[2:])
    grads = backward(p, cache, ds, dv)
    eps = 1e-5
    for name in PARAM_ORDER:
        num = np.zeros_like(p[name])
        it = np.nditer(p[name], flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[name][idx]
            p[name][idx] = orig + eps
            up = total_loss(p, *args)
            p[name][idx] = orig - eps
            down = total_loss(p, *args)
            p[name][idx] = orig
            num[idx] = (up - down) / (2 * eps)
        rel = np.abs(num - grads[name]) / np.maximum(np.maximum(np.abs(num), np.abs(grads[name])), 1e-5)
        assert rel.max() <= 1e-4, name


def test_zero_advantage_leaves_only_entropy():
    p = small_params(2)
    rng = np.random.default_rng(1)
    x, adj = random_graph(rng, 4)
    cache = forward(p, x, adj)
    mask = np.array([True, True, False, True])
    _, _, _, ds, _ = step_losses(cache, mask, 0, 0.0, 0.0, 0.0)
    assert np.all(ds == 0.0)
    _, _, _, ds_h, _ = step_losses(cache, mask, 0, 0.0, 0.0, 0.01)
    # the entropy gradient alone pushes the scores toward uniform
    assert np.abs(ds_h).max() > 0 and ds_h[2] == 0.0


def test_discounted_returns():
    assert discounted_returns([0, 0, 1], 0.95) == pytest.approx([0.9025, 0.95, 1.0])
    assert discounted_returns([], 0.95) == []


def test_masked_softmax():
    logp = masked_log_softmax(np.array([1.0, 5.0, 2.0]), np.array([True, False, True]))
    assert np.exp(logp[1]) == 0.0
    assert np.exp(logp).sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        masked_log_softmax(np.zeros(2), np.zeros(2, bool))


def test_clip_by_global_norm():
    g = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
    clipped, norm = clip_by_global_norm(g, 1.0)
    assert norm == 5.0
    assert np.sqrt(sum((v ** 2).sum() for v in clipped.values())) == pytest.approx(1.0)
    assert clip_by_global_norm(g, 10.0)[0] is g


# -- placement steps and episodes -----------------------------------------------------


def toy_problem(nodes, links, req):
    led, snap = toy_ledger(nodes, links)
    return PlacementProblem(req, snap, led)


def uniform_model():
    m = PolicyModel.initialize(0)
    m.params["w_actor"][:] = 0.0
    return m


def test_single_unmasked_node_certain():
    nodes = {"a": (A, 20.0, 10.0), "b": (G, 500.0, 10.0), "c": (A, 20.0, 10.0)}
    prob = toy_problem(nodes, [("a", "b", 1.0, 50.0)], make_request(vnfs=((50.0, 1.0),)))
    for seed in range(20):
        step = policy_step(PolicyModel.initialize(seed), prob, 0, seed)
        assert step.node == "b" and step.log_prob == 0.0


def test_uniform_logits_pick_ratio():
    nodes = {"a": (G, 500.0, 10.0), "b": (G, 500.0, 10.0), "c": (A, 20.0, 10.0)}
    prob = toy_problem(nodes, [], make_request(vnfs=((50.0, 1.0),)))
    model, ctx = uniform_model(), GraphContext(prob)
    rng = np.random.default_rng(0)
    picks = [policy_step(model, prob, 0, rng, ctx=ctx).node for _ in range(10_000)]
    assert set(picks) == {"a", "b"}
    assert abs(picks.count("a") / 10_000 - 0.5) <= 0.05


def test_greedy_decode_ignores_seed():
    nodes = {f"n{i}": (G, 500.0, 10.0) for i in range(5)}
    links = [("n0", "n1", 1.0, 50.0), ("n1", "n2", 1.0, 50.0), ("n3", "n4", 1.0, 50.0)]
    prob = toy_problem(nodes, links, make_request(vnfs=((50.0, 1.0),)))
    model = PolicyModel.initialize(3)
    scores = forward(model.params, *step_features(GraphContext(prob), prob.request, 0, {})[:1],
                     GraphContext(prob).adjacency).scores
    picks = {policy_step(model, prob, 0, seed, greedy=True).node for seed in range(10)}
    assert picks == {f"n{int(np.argmax(scores))}"}


def test_no_feasible_action():
    prob = toy_problem({"a": (A, 20.0, 10.0)}, [], make_request(vnfs=((50.0, 1.0),)))
    with pytest.raises(NoFeasibleAction):
        policy_step(PolicyModel.initialize(0), prob, 0, 0)
    assert RLPolicy(PolicyModel.initialize(0)).place(prob).rejected


def test_episode_single_vnf_success():
    prob = toy_problem({"g": (G, 500.0, 10.0)}, [], make_request(vnfs=((50.0, 1.0),)))
    traj = a3c_worker_episode(prob, PolicyModel.initialize(0), model_version=7, rng=0)
    assert len(traj.steps) == 1 and traj.rewards == [1.0]
    assert traj.terminal and traj.model_version == 7
    assert prob.ledger.embeddings == {}


def test_episode_infeasible_everywhere():
    prob = toy_problem({"a": (A, 20.0, 10.0), "b": (A, 20.0, 10.0)}, [("a", "b", 1.0, 50.0)],
                       make_request(vnfs=((50.0, 1.0), (5.0, 1.0)), vlinks=(1.0,)))
    traj = a3c_worker_episode(prob, PolicyModel.initialize(0), rng=0)
    assert traj.total_reward() == -1.0 and len(traj.steps) <= 2


def test_episode_hop_shaping():
    # only the two line ends can host one VNF each, three hops apart
    nodes = {"a": (G, 500.0, 1.0), "b": (A, 5.0, 1.0), "c": (A, 5.0, 1.0), "d": (G, 500.0, 1.0)}
    links = [("a", "b", 1.0, 100.0), ("b", "c", 1.0, 100.0), ("c", "d", 1.0, 100.0)]
    req = make_request(vnfs=((50.0, 1.0), (50.0, 1.0)), vlinks=(10.0,))
    for seed in range(4):
        traj = a3c_worker_episode(toy_problem(nodes, links, req), PolicyModel.initialize(seed), rng=seed)
        assert len(traj.steps) == 2
        assert sum(traj.rewards) == pytest.approx(1.0 - 3 * HOP_PENALTY)


def test_features_normalised_and_mask_respected():
    nodes = {"a": (G, 500.0, 10.0), "b": (A, 20.0, 10.0), "c": (A, 300.0, 2.0)}
    prob = toy_problem(nodes, [("a", "b", 1.0, 50.0), ("b", "c", 1.0, 80.0)],
                       make_request(vnfs=((50.0, 1.0), (30.0, 1.5)), vlinks=(2.0,)))
    ctx = GraphContext(prob)
    x, mask = step_features(ctx, prob.request, 1, {0: "c"})
    assert x.shape == (3, 10) and np.all((x >= 0) & (x <= 1))
    assert x[2, 8] == 1.0 and x[2, 9] == 1.0 and x[0, 9] == 0.0
    assert mask.tolist() == [True, False, False]


# -- master updates -----------------------------------------------------------------


def _fake_trajectory(model, n_steps, reward=1.0):
    rng = np.random.default_rng(0)
    traj = Trajectory(0, 0)
    for _ in range(n_steps):
        x, adj = random_graph(rng, 3)
        traj.steps.append(Transition(x, adj, np.ones(3, bool), 1, 0.0, 0.0))
    traj.steps[-1].reward = reward
    return traj


def test_master_applies_after_batch():
    model = PolicyModel.initialize(0)
    master = Master(model, A3CConfig(batch_size=64))
    before = {k: v.copy() for k, v in model.params.items()}
    for _ in range(12):
        assert a3c_update(master, _fake_trajectory(model, 5)) == 0
    assert all(np.array_equal(before[k], model.params[k]) for k in PARAM_ORDER)
    assert a3c_update(master, _fake_trajectory(model, 5)) == 1
    assert any(not np.array_equal(before[k], model.params[k]) for k in PARAM_ORDER)
    assert model.is_finite() and master.pending == 0


def test_master_step_uses_both_learning_rates():
    model = PolicyModel.initialize(0)
    master = Master(model, A3CConfig(batch_size=1))
    traj = _fake_trajectory(model, 1)
    g_a, g_c, _ = trajectory_gradients(model.params, traj, 0.95, 0.01)
    g_a, _ = clip_by_global_norm(g_a, 5.0)
    g_c, _ = clip_by_global_norm(g_c, 5.0)
    expected = {k: model.params[k] - 0.0025 * g_a[k] - 0.0005 * g_c[k] for k in PARAM_ORDER}
    a3c_update(master, traj)
    assert all(np.allclose(model.params[k], expected[k], rtol=0, atol=1e-15) for k in PARAM_ORDER)


# -- checkpoints --------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    m = PolicyModel.initialize(5)
    path = save_checkpoint(tmp_path / "m.bin", m, seed=5, episodes=1234)
    back, meta = load_checkpoint(path)
    assert meta == {"seed": 5, "episodes": 1234, "format_version": 1}
    assert all(np.array_equal(m.params[k], back.params[k]) for k in PARAM_ORDER)


def test_checkpoint_layout():
    m = PolicyModel.initialize(0)
    blob = dumps_checkpoint(m, 3, 9)
    assert blob[:8] == MAGIC == b"SFCOGAT\x00"
    assert struct.unpack_from("<IIII", blob, 8) == (1, 10, 64, 8)
    (nlen,) = struct.unpack_from("<H", blob, 24)
    assert blob[26:26 + nlen] == b"W1"
    assert struct.unpack_from("<B2I", blob, 26 + nlen) == (2, 10, 64)
    first = np.frombuffer(blob, "<f8", 640, 26 + nlen + 9).reshape(10, 64)
    assert np.array_equal(first, m.params["W1"])
    assert struct.unpack("<QQ", blob[-16:]) == (3, 9)
    size = 8 + 16 + sum(2 + len(k) + 1 + 4 * len(s) + 8 * int(np.prod(s)) for k, s in param_shapes().items()) + 16
    assert len(blob) == size


def test_checkpoint_rejects_garbage():
    blob = dumps_checkpoint(PolicyModel.initialize(0))
    with pytest.raises(ParseError):
        loads_checkpoint(b"NOTAGAT\x00" + blob[8:])
    with pytest.raises(ParseError):
        loads_checkpoint(blob[:-20])
    with pytest.raises(ParseError):
        loads_checkpoint(blob + b"\x00")


# -- training -----------------------------------------------------------------------


def stationary_toy():
    """Two ground stations bridged by a hovering UAV plus three isolated weak UAVs."""
    def hover(lat, lon):
        return WaypointTrajectory(((0.0, lat, lon, 3.0), (36000.0, lat, lon, 3.0)))

    nodes = (
        NodeSpec("g0", NodeKind.GROUND, 2000.0, 64.0, FixedGeodetic(30.0, 110.0)),
        NodeSpec("g1", NodeKind.GROUND, 2000.0, 64.0, FixedGeodetic(30.0, 110.8)),
        NodeSpec("u0", NodeKind.AIR, 300.0, 64.0, hover(30.0, 110.4)),
        NodeSpec("u1", NodeKind.AIR, 300.0, 64.0, hover(35.0, 100.0)),
        NodeSpec("u2", NodeKind.AIR, 300.0, 64.0, hover(36.0, 101.0)),
        NodeSpec("u3", NodeKind.AIR, 300.0, 64.0, hover(37.0, 102.0)),
    )
    return Scenario(nodes, horizon_s=36000.0, snapshot_interval_s=600.0)


def test_single_worker_training_is_deterministic():
    sc = stationary_toy()
    series = SnapshotSeries(sc)
    a = train(sc, WorkloadConfig(), workers=1, episodes_budget=150, seed=3, series=series)
    b = train(sc, WorkloadConfig(), workers=1, episodes_budget=150, seed=3, series=series)
    assert a.curve == b.curve and a.episodes == 150
    assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in PARAM_ORDER)


@pytest.mark.slow
def test_learning_progress_on_stationary_toy(tmp_path):
    sc = stationary_toy()
    res = train(sc, WorkloadConfig(), workers=1, episodes_budget=5000, seed=0, checkpoint_dir=tmp_path)
    rewards = res.rewards()
    assert np.mean(rewards[-500:]) > np.mean(rewards[:500])
    assert res.model.is_finite()
    assert [p.name for p in res.checkpoints] == [f"ckpt_{k:07d}.bin" for k in range(1000, 5001, 1000)]
    curve = res.write_curve(tmp_path / "curve.csv").read_text().splitlines()
    assert curve[0] == "episode,reward,moving_avg_reward,actor_loss,critic_loss,entropy"
    assert len(curve) == 5001


def test_multi_worker_training_runs():
    sc = stationary_toy()
    res = train(sc, WorkloadConfig(), workers=2, episodes_budget=200, seed=1)
    assert res.episodes == 200 and res.versions >= 1 and res.model.is_finite()


@pytest.mark.slow
@pytest.mark.skipif((os.cpu_count() or 1) < 2, reason="wall-clock speed-up needs more than one core")
def test_parallel_workers_faster_per_episode():
    sc = stationary_toy()
    t0 = time.perf_counter()
    train(sc, WorkloadConfig(), workers=1, episodes_budget=2000, seed=0)
    single = time.perf_counter() - t0
    t0 = time.perf_counter()
    train(sc, WorkloadConfig(), workers=4, episodes_budget=2000, seed=0)
    assert time.perf_counter() - t0 < single
