import numpy as np
import pytest

from helpers import diamond, single_edge
from misroute.attack import DecomposedGreedyAttack
from misroute.decompose import Partition
from misroute.network import Trip
from misroute.neural import forward, make_mlp
from misroute.rl import (
    Experience,
    HmarlAttackPolicy,
    HmarlBundles,
    HmarlConfig,
    JointExperience,
    LOG_COLUMNS,
    OUNoise,
    ReplayBuffer,
    act_hmarl,
    default_obs_scale,
    edge_features,
    flat_edge_obs,
    make_agent,
    observe_high,
    observe_low,
    ou_noise,
    policy_action,
    reward_high,
    reward_low,
    scale_low_obs,
    soft_update,
    train_hmarl,
    train_network_ddpg,
    update_ddpg,
    update_maddpg,
)
from misroute.simulator import initial_state, run_episode, step


def diamond_partition():
    net, trips = diamond()
    return net, trips, Partition.from_labels(net, [0, 0, 1, 1])


def test_edge_features_worked_example():
    net, trips = diamond()
    state = initial_state(trips)
    f = edge_features(net, trips, state)
    # plans: 0->3 over edges (0,1); 1->3 over edge 1; 2->3 over edge 3
    assert np.array_equal(f.s, [20.0, 40.0, 0.0, 35.0])
    assert np.array_equal(f.s_hat, [20.0, 20.0, 0.0, 35.0])
    assert np.array_equal(f.n, np.zeros(4))
    assert np.array_equal(f.m, np.zeros(4))
    assert np.array_equal(f.s_prev, np.zeros(4))
    state2, _ = step(net, trips, state, np.zeros(4))
    f2 = edge_features(net, trips, state2, prev_s=f.s)
    # trip 2 (size 35) sits on edge 3 with 3 steps left
    assert f2.n[3] == 35.0
    assert f2.m[3] == 105.0
    assert np.array_equal(f2.s_prev, f.s)


def test_edge_mass_counts_steps_left():
    net, trips = single_edge(size=4.0, fft=3.0)
    state, _ = step(net, trips, initial_state(trips), np.zeros(1))
    f = edge_features(net, trips, state)
    assert f.m[0] == 12.0  # size 4, 3 steps remaining
    state, _ = step(net, trips, state, np.zeros(1))
    f = edge_features(net, trips, state)
    assert f.m[0] == 8.0


def test_observe_low_layout():
    net, trips, part = diamond_partition()
    state = initial_state(trips)
    f = edge_features(net, trips, state)
    obs0 = observe_low(net, trips, state, part, 0, features=f)
    # component 0 owns edges 0,1,2 in ascending order, 5 features each
    assert obs0.shape == (15,)
    assert np.array_equal(obs0[0:5], [20.0, 0.0, 20.0, 0.0, 0.0])
    assert np.array_equal(obs0[5:10], [40.0, 0.0, 20.0, 0.0, 0.0])
    obs1 = observe_low(net, trips, state, part, 1, features=f)
    assert np.array_equal(obs1, [35.0, 0.0, 35.0, 0.0, 0.0])


def test_observe_high_layout():
    net, trips, part = diamond_partition()
    state = initial_state(trips)
    obs = observe_high(net, trips, state, part)
    assert np.array_equal(obs, [0.0, 40.0, 0.0, 35.0])
    state2, _ = step(net, trips, state, np.zeros(4))
    obs2 = observe_high(net, trips, state2, part)
    # everyone moved onto edges; 0->3 and 1->3 ride edge 1 (component 0)
    assert obs2[0] == 40.0 and obs2[2] == 35.0


def test_rewards_partition_the_total():
    net, trips, part = diamond_partition()
    state = initial_state(trips)
    rng = np.random.default_rng(0)
    for _ in range(8):
        assert reward_high(trips, state) == pytest.approx(
            sum(reward_low(trips, state, part, k) for k in range(part.count))
        )
        a = rng.uniform(0, 1, size=4)
        state, metrics = step(net, trips, state, a * (3.0 / a.sum()))
        counts = metrics.component_vehicle_counts(part)
        assert counts.sum() == pytest.approx(metrics.remaining_total)
        for k in range(part.count):
            assert counts[k] == pytest.approx(reward_low(trips, state, part, k))


def test_ou_noise_mean_reversion():
    rng = np.random.default_rng(1)
    x = np.array([10.0, -10.0])
    # sigma 0 decays deterministically toward zero
    y = ou_noise(x, theta=0.25, sigma=0.0, rng=rng)
    assert np.allclose(y, [7.5, -7.5])
    proc = OUNoise(3, theta=0.15, sigma=0.2, rng=np.random.default_rng(2))
    samples = np.stack([proc.sample() for _ in range(4000)])
    assert abs(samples.mean()) < 0.1
    # stationary std is sigma / sqrt(2 theta)
    assert samples[-2000:].std() == pytest.approx(0.2 / np.sqrt(0.3), rel=0.2)
    proc.reset()
    assert np.array_equal(proc.state, np.zeros(3))


def test_ou_noise_deterministic_per_seed():
    a = OUNoise(2, 0.15, 0.2, np.random.default_rng(7))
    b = OUNoise(2, 0.15, 0.2, np.random.default_rng(7))
    for _ in range(5):
        assert np.array_equal(a.sample(), b.sample())


def test_replay_buffer_ring_and_sampling():
    buf = ReplayBuffer(3, np.random.default_rng(3))
    for i in range(5):
        buf.add(i)
    assert len(buf) == 3
    assert sorted(buf._items) == [2, 3, 4]  # oldest evicted first
    with pytest.raises(ValueError):
        buf.sample(4)
    draw = buf.sample(3)
    assert sorted(draw) == [2, 3, 4]  # without replacement
    with pytest.raises(ValueError):
        ReplayBuffer(0, np.random.default_rng(0))


def test_replay_buffer_sampling_is_uniform():
    buf = ReplayBuffer(10, np.random.default_rng(4))
    for i in range(10):
        buf.add(i)
    counts = np.zeros(10)
    for _ in range(2000):
        for v in buf.sample(2):
            counts[v] += 1
    assert counts.min() > 0.7 * counts.max()


def test_soft_update_blends():
    live = make_mlp((2, 2), rng=5)
    target = make_mlp((2, 2), rng=6)
    w_live = live.weights[0].copy()
    w_tgt = target.weights[0].copy()
    soft_update(target, live, 0.25)
    assert np.allclose(target.weights[0], 0.75 * w_tgt + 0.25 * w_live)
    soft_update(target, live, 1.0)
    assert np.allclose(target.weights[0], w_live)
    with pytest.raises(ValueError):
        soft_update(target, live, 1.5)


def test_policy_action_transform_and_noise():
    rng = np.random.default_rng(8)
    bundle = make_agent(
        3, 4, (8,), rng, gamma=0.9, lr_actor=1e-3, lr_critic=1e-3, tau=0.01,
        action_head="softmax", action_total=5.0,
        noise_rng=np.random.default_rng(9),
    )
    a = policy_action(bundle, np.zeros(3), explore=False)
    assert np.allclose(a, 1.25)  # zero obs, zero biases: uniform softmax
    b = policy_action(bundle, np.zeros(3), explore=True)
    assert b.sum() == pytest.approx(5.0)
    assert not np.allclose(b, 1.25)
    bare = make_agent(3, 4, (8,), rng, gamma=0.9, lr_actor=1e-3, lr_critic=1e-3, tau=0.01)
    with pytest.raises(ValueError):
        policy_action(bare, np.zeros(3), explore=True)


def synthetic_batch(rng, n, obs_dim, act_dim, terminal=False, reward_fn=None):
    batch = []
    for _ in range(n):
        obs = rng.normal(size=obs_dim)
        act = rng.uniform(0, 1, size=act_dim)
        rew = float(reward_fn(obs, act)) if reward_fn else float(rng.normal())
        batch.append(
            Experience(obs=obs, action=act, reward=rew, next_obs=rng.normal(size=obs_dim), terminal=terminal)
        )
    return batch


def test_update_ddpg_gamma_zero_learns_reward():
    # with gamma 0 the critic regresses pure rewards; drive it onto a linear
    # reward and check the fit improves by orders of magnitude
    rng = np.random.default_rng(10)
    bundle = make_agent(
        3, 2, (16,), rng, gamma=0.0, lr_actor=1e-4, lr_critic=3e-3, tau=0.01,
    )
    reward_fn = lambda obs, act: obs[0] - 2 * act[1]
    batch = synthetic_batch(rng, 64, 3, 2, reward_fn=reward_fn)
    first_loss, _ = update_ddpg(bundle, batch, gamma=0.0)
    for _ in range(600):
        loss, _ = update_ddpg(bundle, batch, gamma=0.0)
    assert loss < first_loss * 1e-2


def test_update_ddpg_terminal_masks_bootstrap():
    # all-terminal transitions make the target exactly the reward, so the
    # critic must converge to it even with a large discount
    rng = np.random.default_rng(11)
    bundle = make_agent(
        2, 1, (8,), rng, gamma=0.95, lr_actor=1e-5, lr_critic=5e-3, tau=0.01,
    )
    exp = Experience(
        obs=np.array([0.5, -0.5]), action=np.array([0.3]), reward=1.0,
        next_obs=np.array([1.0, 1.0]), terminal=True,
    )
    for _ in range(800):
        update_ddpg(bundle, [exp] * 8)
    q, _ = forward(bundle.critic, np.concatenate([exp.obs, exp.action]))
    assert q[0] == pytest.approx(1.0, abs=0.05)


def test_update_ddpg_rejects_empty_batch():
    rng = np.random.default_rng(12)
    bundle = make_agent(2, 1, (4,), rng, gamma=0.9, lr_actor=1e-3, lr_critic=1e-3, tau=0.01)
    with pytest.raises(ValueError):
        update_ddpg(bundle, [])


def make_twin_bundles(obs_dim, act_dim, *, full=False, kcomp=0):
    kwargs = dict(gamma=0.9, lr_actor=1e-3, lr_critic=1e-3, tau=0.05, action_head="softmax")
    a = make_agent(obs_dim, act_dim, (8,), np.random.default_rng(13), **kwargs)
    if full:
        kwargs["critic_obs_dim"] = 2 * kcomp + obs_dim
    b = make_agent(obs_dim, act_dim, (8,), np.random.default_rng(13), **kwargs)
    return a, b


def test_maddpg_single_agent_matches_ddpg():
    # one agent with a zero-width global observation: the joint update must
    # reproduce plain DDPG bit for bit, in both critic modes
    rng = np.random.default_rng(14)
    batch = synthetic_batch(rng, 16, 4, 3)
    for e in batch:
        e.action = e.action / e.action.sum()
    joint = [
        JointExperience(
            per_agent=[Experience(e.obs, e.action, e.reward, e.next_obs, e.terminal)],
            global_obs=np.zeros(0),
            next_global_obs=np.zeros(0),
            joint_action=e.action.copy(),
        )
        for e in batch
    ]
    plain, joint_b = make_twin_bundles(4, 3, full=True, kcomp=0)
    r1 = update_ddpg(plain, batch, 0.9)
    r2 = update_maddpg([joint_b], joint, 0.9, full_critics=True)[0]
    assert r1 == pytest.approx(r2, rel=1e-12)
    for w1, w2 in zip(plain.actor.weights, joint_b.actor.weights):
        assert np.array_equal(w1, w2)
    for w1, w2 in zip(plain.critic.weights, joint_b.critic.weights):
        assert np.array_equal(w1, w2)
    for w1, w2 in zip(plain.actor_target.weights, joint_b.actor_target.weights):
        assert np.array_equal(w1, w2)

    plain2, local_b = make_twin_bundles(4, 3)
    r3 = update_ddpg(plain2, batch, 0.9)
    r4 = update_maddpg([local_b], joint, 0.9, full_critics=False)[0]
    assert r3 == pytest.approx(r4, rel=1e-12)
    for w1, w2 in zip(plain2.critic.weights, local_b.critic.weights):
        assert np.array_equal(w1, w2)


def test_maddpg_validates_agent_count():
    rng = np.random.default_rng(15)
    bundle = make_agent(2, 1, (4,), rng, gamma=0.9, lr_actor=1e-3, lr_critic=1e-3, tau=0.01)
    je = JointExperience(
        per_agent=[],
        global_obs=np.zeros(2),
        next_global_obs=np.zeros(2),
        joint_action=np.zeros(1),
    )
    with pytest.raises(ValueError):
        update_maddpg([bundle], [je])
    with pytest.raises(ValueError):
        update_maddpg([bundle], [])


def fresh_hmarl_bundles(part, rng_seed=16):
    rng = np.random.default_rng(rng_seed)
    kwargs = dict(gamma=0.9, lr_actor=1e-3, lr_critic=1e-3, tau=0.01, action_head="softmax")
    high = make_agent(2 * part.count, part.count, (8,), rng, **kwargs)
    low = [
        make_agent(5 * len(part.edges_by_component[k]) + 1, len(part.edges_by_component[k]), (8,), rng, **kwargs)
        for k in range(part.count)
    ]
    return HmarlBundles(high=high, low=low, edge_index=part.edges_by_component, head="softmax")


def test_act_hmarl_uniform_at_zero_observation():
    net, trips, part = diamond_partition()
    bundles = fresh_hmarl_bundles(part)
    # silence the budget-fraction input so a zero traffic observation yields
    # zero logits and therefore an exactly uniform within-component split
    for bundle in bundles.low:
        bundle.actor.weights[0][-1, :] = 0.0
    obs_low = [np.zeros(5 * len(part.edges_by_component[k])) for k in range(2)]
    res = act_hmarl(bundles, np.zeros(4), obs_low, budget=12.0, explore=False)
    assert np.allclose(res.b_frac, 0.5)
    assert np.allclose(res.b_hat, 6.0)
    assert res.a.sum() == pytest.approx(12.0)
    # component 0 has 3 edges, so its uniform split is 2.0 each
    assert np.allclose(res.a[[0, 1, 2]], 2.0)
    assert np.allclose(res.a[3], 6.0)
    assert res.low_inputs[0].shape == (16,)
    assert res.low_inputs[0][-1] == 0.5


def test_hmarl_policy_heuristic_modes_match_decomposed_greedy():
    net, trips, part = diamond_partition()
    pol = HmarlAttackPolicy(part, 9.0, high_mode="proportional", low_mode="greedy")
    ref = DecomposedGreedyAttack(part, 9.0)
    state = initial_state(trips)
    a1 = pol.perturbation(net, trips, state)
    a2 = ref.perturbation(net, trips, state)
    assert np.array_equal(a1, a2)
    r1 = run_episode(net, trips, pol, horizon=30, gamma=0.99)
    r2 = run_episode(net, trips, ref, horizon=30, gamma=0.99)
    assert np.array_equal(r1.remaining_per_step, r2.remaining_per_step)


def test_hmarl_policy_validation():
    net, trips, part = diamond_partition()
    with pytest.raises(ValueError):
        HmarlAttackPolicy(part, -1.0, high_mode="proportional", low_mode="greedy")
    with pytest.raises(ValueError):
        HmarlAttackPolicy(part, 1.0, high_mode="magic", low_mode="greedy")
    with pytest.raises(ValueError):
        HmarlAttackPolicy(part, 1.0, high_mode="proportional", low_mode="sgd")
    with pytest.raises(ValueError):
        HmarlAttackPolicy(part, 1.0)  # rl modes need bundles


def test_hmarl_policy_spends_budget_in_episode():
    net, trips, part = diamond_partition()
    bundles = fresh_hmarl_bundles(part)
    pol = HmarlAttackPolicy(part, 7.5, bundles=bundles)
    res = run_episode(net, trips, pol, horizon=25, gamma=0.99)
    assert res.steps_run <= 25  # no budget contract violation raised


def test_default_obs_scale_and_low_scaling():
    trips = [Trip(0, 1, 300.0), Trip(0, 1, 100.0)]
    scale = default_obs_scale(trips)
    assert np.allclose(scale, [1 / 400.0, 1 / 80000.0])
    raw = np.arange(10, dtype=np.float64)
    scaled = scale_low_obs(raw, np.array([0.5, 0.01]))
    expect = raw * 0.5
    expect[3] = raw[3] * 0.01
    expect[8] = raw[8] * 0.01
    assert np.allclose(scaled, expect)


def test_flat_edge_obs_layout():
    net, trips = diamond()
    f = edge_features(net, trips, initial_state(trips))
    obs = flat_edge_obs(f)
    assert obs.shape == (20,)
    assert np.array_equal(obs[0:5], [20.0, 0.0, 20.0, 0.0, 0.0])


def test_config_validation():
    cfg = HmarlConfig()
    cfg.validate()  # defaults are consistent
    with pytest.warns(UserWarning):
        HmarlConfig(lr_actor_low=1e-3, lr_actor_high=1e-3).validate()
    with pytest.warns(UserWarning):
        HmarlConfig(gamma_low=0.5, gamma_high=0.9).validate()
    with pytest.raises(ValueError):
        HmarlConfig(gamma_high=0.0).validate()
    with pytest.raises(ValueError):
        HmarlConfig(normalize_head="linear").validate()


def tiny_config(**overrides):
    base = dict(
        episodes=2,
        horizon=8,
        batch_size=4,
        buffer_capacity=64,
        hidden=(8,),
        demand_jitter=0.05,
    )
    base.update(overrides)
    return HmarlConfig(**base)


def test_train_hmarl_smoke_and_log_schema():
    net, trips, part = diamond_partition()
    result = train_hmarl(net, trips, part, 4.0, tiny_config(), seed=21)
    assert len(result.log_rows) == 2
    for row in result.log_rows:
        assert tuple(row.keys()) == LOG_COLUMNS
        assert row["steps"] >= 1
        assert row["undiscounted_objective"] >= row["discounted_objective"] > 0
    assert result.policy.name == "hmarl"
    ep = run_episode(net, trips, result.policy, horizon=20, gamma=0.99)
    assert ep.steps_run >= 1


def test_train_hmarl_deterministic_per_seed():
    net, trips, part = diamond_partition()
    r1 = train_hmarl(net, trips, part, 4.0, tiny_config(), seed=22)
    r2 = train_hmarl(net, trips, part, 4.0, tiny_config(), seed=22)

    def strip(rows):
        # drop wallclock and map nan losses (no update yet) to None so rows
        # compare by value
        out = []
        for row in rows:
            clean = {}
            for k, v in row.items():
                if k == "wallclock_s":
                    continue
                if isinstance(v, float) and np.isnan(v):
                    v = None
                clean[k] = v
            out.append(clean)
        return out
    assert strip(r1.log_rows) == strip(r2.log_rows)
    for w1, w2 in zip(r1.bundles.high.actor.weights, r2.bundles.high.actor.weights):
        assert np.array_equal(w1, w2)
    for b1, b2 in zip(r1.bundles.low, r2.bundles.low):
        for w1, w2 in zip(b1.actor.weights, b2.actor.weights):
            assert np.array_equal(w1, w2)
    r3 = train_hmarl(net, trips, part, 4.0, tiny_config(), seed=23)
    assert strip(r1.log_rows) != strip(r3.log_rows)


def test_train_hmarl_ablation_modes():
    net, trips, part = diamond_partition()
    low_only = train_hmarl(
        net, trips, part, 4.0, tiny_config(episodes=1), seed=24, high_mode="proportional"
    )
    assert low_only.policy.name == "ablation-low"
    assert low_only.bundles.high is None and low_only.bundles.low is not None
    high_only = train_hmarl(
        net, trips, part, 4.0, tiny_config(episodes=1), seed=24, low_mode="greedy"
    )
    assert high_only.policy.name == "ablation-high"
    assert high_only.bundles.high is not None and high_only.bundles.low is None
    with pytest.raises(ValueError):
        train_hmarl(
            net, trips, part, 4.0, tiny_config(episodes=1), seed=24,
            high_mode="proportional", low_mode="greedy",
        )


def test_train_hmarl_full_low_critics_mode():
    net, trips, part = diamond_partition()
    cfg = tiny_config(full_low_critics=True)
    result = train_hmarl(net, trips, part, 4.0, cfg, seed=25)
    # widened critics: input is global obs + own obs + joint action
    joint_width = sum(len(idx) for idx in part.edges_by_component)
    for k, bundle in enumerate(result.bundles.low):
        own = 5 * len(part.edges_by_component[k]) + 1
        assert bundle.critic.in_dim == 2 * part.count + own + joint_width


def test_train_network_ddpg_smoke():
    net, trips, _ = diamond_partition()
    result = train_network_ddpg(net, trips, 4.0, tiny_config(), seed=26)
    assert len(result.log_rows) == 2
    assert result.policy.name == "ddpg"
    assert result.flat_bundle.actor.in_dim == 5 * net.edge_count
    ep = run_episode(net, trips, result.policy, horizon=20, gamma=0.99)
    assert ep.steps_run >= 1
    r2 = train_network_ddpg(net, trips, 4.0, tiny_config(), seed=26)
    for w1, w2 in zip(result.flat_bundle.actor.weights, r2.flat_bundle.actor.weights):
        assert np.array_equal(w1, w2)
