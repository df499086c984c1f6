"""Hierarchical multi-agent reinforcement learning for attack synthesis.

A high-level agent splits the perturbation budget across graph components;
one low-level agent per component spreads its share over that component's
edges. Both levels are deterministic-policy actor-critic pairs trained
off-policy from replay with target networks, soft updates, and OU
exploration noise. Heuristic stand-ins can replace either level, which
yields the two ablation attackers, and a single flat agent over all edges
gives the plain DDPG baseline.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .attack import AttackPolicy, local_greedy, proportional_allocation
from .network import RoadNetwork, Trip, scale_demand, total_demand, trip_sizes
from .neural import (
    Grads,
    MlpNet,
    adam_step,
    backward,
    copy_net,
    forward,
    make_mlp,
    normalize_budget,
    normalize_budget_vjp,
)
from .seeding import derive_rng
from .simulator import SimState, congested_times, decider_paths, initial_state, step

__all__ = [
    "EdgeFeatures",
    "edge_features",
    "observe_low",
    "observe_high",
    "reward_low",
    "reward_high",
    "ou_noise",
    "OUNoise",
    "ReplayBuffer",
    "Experience",
    "JointExperience",
    "AgentBundle",
    "make_agent",
    "soft_update",
    "policy_action",
    "update_ddpg",
    "update_maddpg",
    "HmarlBundles",
    "ActResult",
    "act_hmarl",
    "HmarlConfig",
    "HmarlAttackPolicy",
    "FlatDdpgPolicy",
    "TrainResult",
    "train_hmarl",
    "train_network_ddpg",
]


# ---------------------------------------------------------------------------
# observations and rewards


@dataclass(frozen=True)
class EdgeFeatures:
    """Raw per-edge traffic descriptors at one state.

    s: vehicles whose current shortest path crosses the edge.
    n: vehicles on the edge right now.
    s_hat: vehicles whose path starts with the edge (enter next step).
    m: remaining traversal mass on the edge (sum of size * steps left).
    s_prev: s from the previous step (zeros at episode start).
    w: congested times the paths were computed under.
    """

    s: np.ndarray
    n: np.ndarray
    s_hat: np.ndarray
    m: np.ndarray
    s_prev: np.ndarray
    w: np.ndarray


def edge_features(
    network: RoadNetwork,
    trips: list[Trip],
    state: SimState,
    prev_s: np.ndarray | None = None,
) -> EdgeFeatures:
    """Compute all per-edge descriptors from one state.

    Paths are taken under the current unperturbed congested times.
    """
    w = congested_times(network, state, trips)
    sizes = trip_sizes(trips)
    s = np.zeros(network.edge_count, dtype=np.float64)
    s_hat = np.zeros(network.edge_count, dtype=np.float64)
    for r, path in decider_paths(network, trips, state, w):
        if path is None or not path.edges:
            continue
        s_hat[path.edges[0]] += sizes[r]
        for e in path.edges:
            s[e] += sizes[r]
    n = np.zeros(network.edge_count, dtype=np.float64)
    m = np.zeros(network.edge_count, dtype=np.float64)
    on = state.on_edge >= 0
    if on.any():
        np.add.at(n, state.on_edge[on], sizes[on])
        np.add.at(m, state.on_edge[on], sizes[on] * state.remaining[on])
    if prev_s is None:
        prev_s = np.zeros(network.edge_count, dtype=np.float64)
    return EdgeFeatures(s=s, n=n, s_hat=s_hat, m=m, s_prev=prev_s, w=w)


def observe_low(
    network: RoadNetwork,
    trips: list[Trip],
    state: SimState,
    partition,
    k: int,
    *,
    prev_s: np.ndarray | None = None,
    features: EdgeFeatures | None = None,
) -> np.ndarray:
    """Component k's observation: per-edge (s, n, s_hat, m, s_prev) tuples.

    Edges appear in ascending edge-id order; the result is the flattened
    row-major stack, length 5 * |component edges|.
    """
    if features is None:
        features = edge_features(network, trips, state, prev_s)
    idx = partition.edges_by_component[k]
    stack = np.stack(
        [features.s[idx], features.n[idx], features.s_hat[idx], features.m[idx], features.s_prev[idx]],
        axis=1,
    )
    return stack.ravel()


def observe_high(
    network: RoadNetwork,
    trips: list[Trip],
    state: SimState,
    partition,
    *,
    features: EdgeFeatures | None = None,
) -> np.ndarray:
    """High-level observation: per component (total on-edge, total entering)."""
    if features is None:
        features = edge_features(network, trips, state)
    out = np.zeros(2 * partition.count, dtype=np.float64)
    for k in range(partition.count):
        idx = partition.edges_by_component[k]
        out[2 * k] = features.n[idx].sum()
        out[2 * k + 1] = features.s_hat[idx].sum()
    return out


def reward_high(trips: list[Trip], state: SimState) -> float:
    """Unarrived vehicle total; what the attacker maximizes each step."""
    sizes = trip_sizes(trips)
    return float(np.sum(sizes[~state.arrived]))


def reward_low(trips: list[Trip], state: SimState, partition, k: int) -> float:
    """Unarrived vehicles located inside component k (by node or edge)."""
    sizes = trip_sizes(trips)
    total = 0.0
    at = (state.at_node >= 0) & ~state.arrived
    for r in np.nonzero(at)[0]:
        if partition.node_component[state.at_node[r]] == k:
            total += sizes[r]
    on = state.on_edge >= 0
    for r in np.nonzero(on)[0]:
        if partition.edge_component[state.on_edge[r]] == k:
            total += sizes[r]
    return float(total)


# ---------------------------------------------------------------------------
# exploration noise and replay


def ou_noise(state: np.ndarray, theta: float, sigma: float, rng: np.random.Generator, dt: float = 1.0) -> np.ndarray:
    """One Ornstein-Uhlenbeck step around zero."""
    state = np.asarray(state, dtype=np.float64)
    return state + theta * (0.0 - state) * dt + sigma * np.sqrt(dt) * rng.standard_normal(state.shape)


class OUNoise:
    """Stateful OU process; reset() returns it to the origin."""

    def __init__(self, dim: int, theta: float, sigma: float, rng: np.random.Generator, dt: float = 1.0):
        self.dim = dim
        self.theta = theta
        self.sigma = sigma
        self.dt = dt
        self.rng = rng
        self.state = np.zeros(dim, dtype=np.float64)

    def reset(self) -> None:
        self.state = np.zeros(self.dim, dtype=np.float64)

    def sample(self) -> np.ndarray:
        self.state = ou_noise(self.state, self.theta, self.sigma, self.rng, self.dt)
        return self.state


class ReplayBuffer:
    """Fixed-capacity ring buffer with seeded uniform sampling."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.rng = rng
        self._items: list = []
        self._next = 0

    def add(self, item) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def sample(self, batch_size: int) -> list:
        if batch_size > len(self._items):
            raise ValueError(f"cannot sample {batch_size} items from buffer of {len(self._items)}")
        idx = self.rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[i] for i in idx]


@dataclass
class Experience:
    """One transition as a single agent saw it."""

    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    terminal: bool


@dataclass
class JointExperience:
    """Time-aligned transitions of all low-level agents at one step.

    Per-agent observations carry the allocated budget fraction at both the
    current and the next step. joint_action concatenates every agent's
    executed action fractions in component order.
    """

    per_agent: list[Experience]
    global_obs: np.ndarray
    next_global_obs: np.ndarray
    joint_action: np.ndarray


# ---------------------------------------------------------------------------
# agents


@dataclass
class AgentBundle:
    """Actor-critic pair with frozen target copies and exploration noise.

    action_head None means raw actor outputs are the actions; "softmax" or
    "l1relu" normalizes them to a simplex scaled by action_total.
    """

    actor: MlpNet
    critic: MlpNet
    actor_target: MlpNet
    critic_target: MlpNet
    gamma: float
    lr_actor: float
    lr_critic: float
    tau: float
    action_head: str | None = None
    action_total: float = 1.0
    ou: OUNoise | None = None


def make_agent(
    obs_dim: int,
    act_dim: int,
    hidden,
    rng: np.random.Generator,
    *,
    gamma: float,
    lr_actor: float,
    lr_critic: float,
    tau: float,
    action_head: str | None = None,
    action_total: float = 1.0,
    critic_head: str = "linear",
    critic_obs_dim: int | None = None,
    critic_act_dim: int | None = None,
    ou_theta: float = 0.15,
    ou_sigma: float = 0.2,
    noise_rng: np.random.Generator | None = None,
) -> AgentBundle:
    """Build an agent; targets start as exact copies of the live nets."""
    hidden = tuple(hidden)
    actor = make_mlp((obs_dim, *hidden, act_dim), head="linear", rng=rng)
    c_obs = obs_dim if critic_obs_dim is None else critic_obs_dim
    c_act = act_dim if critic_act_dim is None else critic_act_dim
    critic = make_mlp((c_obs + c_act, *hidden, 1), head=critic_head, rng=rng)
    ou = None
    if noise_rng is not None:
        ou = OUNoise(act_dim, ou_theta, ou_sigma, noise_rng)
    return AgentBundle(
        actor=actor,
        critic=critic,
        actor_target=copy_net(actor),
        critic_target=copy_net(critic),
        gamma=gamma,
        lr_actor=lr_actor,
        lr_critic=lr_critic,
        tau=tau,
        action_head=action_head,
        action_total=action_total,
        ou=ou,
    )


def soft_update(target: MlpNet, live: MlpNet, tau: float) -> None:
    """target <- tau * live + (1 - tau) * target, in place."""
    if not 0 <= tau <= 1:
        raise ValueError("tau must lie in [0, 1]")
    for tp, lp in zip(target.weights, live.weights):
        tp *= 1.0 - tau
        tp += tau * lp
    for tp, lp in zip(target.biases, live.biases):
        tp *= 1.0 - tau
        tp += tau * lp


def _transform(bundle: AgentBundle, raw: np.ndarray) -> np.ndarray:
    if bundle.action_head is None:
        return raw
    return normalize_budget(raw, bundle.action_head, bundle.action_total)


def _transform_vjp(bundle: AgentBundle, raw: np.ndarray, gout: np.ndarray) -> np.ndarray:
    if bundle.action_head is None:
        return gout
    return normalize_budget_vjp(raw, bundle.action_head, bundle.action_total, gout)


def policy_action(bundle: AgentBundle, obs: np.ndarray, explore: bool) -> np.ndarray:
    """Deterministic action, with OU noise on the raw scores when exploring."""
    raw, _ = forward(bundle.actor, obs)
    if explore:
        if bundle.ou is None:
            raise ValueError("agent has no exploration noise attached")
        raw = raw + bundle.ou.sample()
    return _transform(bundle, raw)


def _negate(grads: Grads) -> Grads:
    return Grads(
        weights=[-g for g in grads.weights],
        biases=[-g for g in grads.biases],
        x=-grads.x,
    )


def _stack_batch(batch: list[Experience]):
    obs = np.stack([np.asarray(e.obs, dtype=np.float64) for e in batch])
    act = np.stack([np.atleast_1d(np.asarray(e.action, dtype=np.float64)) for e in batch])
    rew = np.array([[e.reward] for e in batch], dtype=np.float64)
    nobs = np.stack([np.asarray(e.next_obs, dtype=np.float64) for e in batch])
    term = np.array([[1.0 if e.terminal else 0.0] for e in batch], dtype=np.float64)
    return obs, act, rew, nobs, term


def _ddpg_core(
    bundle: AgentBundle,
    prefix: np.ndarray,
    next_prefix: np.ndarray,
    actions_full: np.ndarray,
    next_actions_full: np.ndarray,
    rew: np.ndarray,
    term: np.ndarray,
    gamma: float,
    own_obs: np.ndarray,
    own_slice: slice,
) -> tuple[float, float]:
    """Shared critic-regression / actor-ascent step.

    prefix rows are whatever the critic sees before the action block; in the
    plain case that is the agent's own observation, in the widened case the
    global observation concatenated with it. own_slice locates this agent's
    action inside the action block.
    """
    n = prefix.shape[0]

    # critic: regress Q(prefix, actions) onto the bootstrapped target
    q_next, _ = forward(bundle.critic_target, np.concatenate([next_prefix, next_actions_full], axis=1))
    y = rew + gamma * (1.0 - term) * q_next
    q, tape_c = forward(bundle.critic, np.concatenate([prefix, actions_full], axis=1))
    diff = q - y
    critic_loss = float(np.mean(diff**2))
    grads_c = backward(bundle.critic, tape_c, 2.0 * diff / n)
    adam_step(bundle.critic, grads_c, bundle.lr_critic)

    # actor: ascend Q with own action replaced by the policy output
    raw, tape_a = forward(bundle.actor, own_obs)
    own_action = _transform(bundle, raw)
    acts = actions_full.copy()
    acts[:, own_slice] = own_action
    q2, tape_c2 = forward(bundle.critic, np.concatenate([prefix, acts], axis=1))
    actor_objective = float(np.mean(q2))
    grads_q = backward(bundle.critic, tape_c2, np.full_like(q2, 1.0 / n))
    g_action = grads_q.x[:, prefix.shape[1] :][:, own_slice]
    g_raw = _transform_vjp(bundle, raw, g_action)
    grads_a = backward(bundle.actor, tape_a, g_raw)
    adam_step(bundle.actor, _negate(grads_a), bundle.lr_actor)

    soft_update(bundle.actor_target, bundle.actor, bundle.tau)
    soft_update(bundle.critic_target, bundle.critic, bundle.tau)
    return critic_loss, actor_objective


def update_ddpg(bundle: AgentBundle, batch: list[Experience], gamma: float | None = None) -> tuple[float, float]:
    """One DDPG update from a replay batch.

    Returns (critic loss, mean critic value under the current actor).
    """
    if not batch:
        raise ValueError("empty batch")
    if gamma is None:
        gamma = bundle.gamma
    obs, act, rew, nobs, term = _stack_batch(batch)
    next_raw, _ = forward(bundle.actor_target, nobs)
    next_act = _transform(bundle, next_raw)
    return _ddpg_core(
        bundle,
        prefix=obs,
        next_prefix=nobs,
        actions_full=act,
        next_actions_full=next_act,
        rew=rew,
        term=term,
        gamma=gamma,
        own_obs=obs,
        own_slice=slice(0, act.shape[1]),
    )


def update_maddpg(
    bundles: list[AgentBundle],
    batch: list[JointExperience],
    gamma: float | None = None,
    *,
    full_critics: bool = False,
) -> list[tuple[float, float]]:
    """Simultaneous update of all low-level agents from one joint batch.

    With full_critics=False each critic sees only its own component's
    observation, budget share, and action. With full_critics=True critics
    additionally condition on the global observation and every agent's
    action, and bootstrap through all target actors.
    """
    if not batch:
        raise ValueError("empty batch")
    k = len(bundles)
    for je in batch:
        if len(je.per_agent) != k:
            raise ValueError(
                f"joint experience carries {len(je.per_agent)} agents, expected {k}"
            )
    results = []
    if not full_critics:
        for i, bundle in enumerate(bundles):
            sub = [je.per_agent[i] for je in batch]
            results.append(update_ddpg(bundle, sub, gamma))
        return results

    global_obs = np.stack([je.global_obs for je in batch])
    next_global = np.stack([je.next_global_obs for je in batch])
    joint_act = np.stack([je.joint_action for je in batch])
    obs_i = [np.stack([je.per_agent[i].obs for je in batch]) for i in range(k)]
    nobs_i = [np.stack([je.per_agent[i].next_obs for je in batch]) for i in range(k)]
    next_joint = []
    for j, bj in enumerate(bundles):
        raw, _ = forward(bj.actor_target, nobs_i[j])
        next_joint.append(_transform(bj, raw))
    next_joint = np.concatenate(next_joint, axis=1)
    widths = [b.actor.out_dim for b in bundles]
    offsets = np.concatenate([[0], np.cumsum(widths)])
    for i, bundle in enumerate(bundles):
        rew = np.array([[je.per_agent[i].reward] for je in batch])
        term = np.array([[1.0 if je.per_agent[i].terminal else 0.0] for je in batch])
        g = bundle.gamma if gamma is None else gamma
        results.append(
            _ddpg_core(
                bundle,
                prefix=np.concatenate([global_obs, obs_i[i]], axis=1),
                next_prefix=np.concatenate([next_global, nobs_i[i]], axis=1),
                actions_full=joint_act,
                next_actions_full=next_joint,
                rew=rew,
                term=term,
                gamma=g,
                own_obs=obs_i[i],
                own_slice=slice(int(offsets[i]), int(offsets[i + 1])),
            )
        )
    return results


# ---------------------------------------------------------------------------
# hierarchical acting


@dataclass
class HmarlBundles:
    """All trained pieces of the hierarchy, plus the component edge layout."""

    high: AgentBundle | None
    low: list[AgentBundle] | None
    edge_index: tuple[np.ndarray, ...]
    head: str = "softmax"
    high_noise: bool = True

    @property
    def component_count(self) -> int:
        return len(self.edge_index)


@dataclass
class ActResult:
    """One hierarchical action: budget split and assembled perturbation."""

    b_frac: np.ndarray
    b_hat: np.ndarray
    a: np.ndarray
    a_frac: list[np.ndarray]
    low_inputs: list[np.ndarray]


def _act_low(
    bundles: HmarlBundles,
    obs_low: list[np.ndarray],
    b_frac: np.ndarray,
    b_hat: np.ndarray,
    edge_count: int,
    explore: bool,
) -> ActResult:
    a = np.zeros(edge_count, dtype=np.float64)
    a_frac = []
    low_inputs = []
    for k, bundle in enumerate(bundles.low):
        obs_full = np.concatenate([obs_low[k], [b_frac[k]]])
        low_inputs.append(obs_full)
        raw, _ = forward(bundle.actor, obs_full)
        if explore:
            raw = raw + bundle.ou.sample()
        frac = normalize_budget(raw, bundles.head, 1.0)
        a_frac.append(frac)
        a[bundles.edge_index[k]] = frac * b_hat[k]
    return ActResult(b_frac=b_frac, b_hat=b_hat, a=a, a_frac=a_frac, low_inputs=low_inputs)


def act_hmarl(
    bundles: HmarlBundles,
    obs_high: np.ndarray,
    obs_low: list[np.ndarray],
    budget: float,
    explore: bool,
) -> ActResult:
    """Full hierarchical action on one state's observations.

    The high level emits budget fractions over components; each low level
    spreads its share over its component's edges. Exploration adds OU noise
    to the raw scores before normalization.
    """
    raw, _ = forward(bundles.high.actor, obs_high)
    if explore and bundles.high_noise and bundles.high.ou is not None:
        raw = raw + bundles.high.ou.sample()
    b_frac = normalize_budget(raw, bundles.head, 1.0)
    b_hat = budget * b_frac
    edge_count = sum(len(idx) for idx in bundles.edge_index)
    return _act_low(bundles, obs_low, b_frac, b_hat, edge_count, explore)


# ---------------------------------------------------------------------------
# attack policies backed by the hierarchy


class HmarlAttackPolicy(AttackPolicy):
    """Episode-ready attacker combining the two levels.

    Either level can be a trained agent or its heuristic stand-in:
    proportional allocation above, within-component greedy below.
    """

    def __init__(
        self,
        partition,
        budget: float,
        *,
        bundles: HmarlBundles | None = None,
        high_mode: str = "rl",
        low_mode: str = "rl",
        explore: bool = False,
        obs_scale: np.ndarray | None = None,
        name: str = "hmarl",
    ):
        if budget < 0:
            raise ValueError("budget must be nonnegative")
        if high_mode not in ("rl", "proportional"):
            raise ValueError(f"unknown high-level mode {high_mode!r}")
        if low_mode not in ("rl", "greedy"):
            raise ValueError(f"unknown low-level mode {low_mode!r}")
        if (high_mode == "rl" or low_mode == "rl") and bundles is None:
            raise ValueError("trained modes need bundles")
        self.partition = partition
        self.budget = float(budget)
        self.bundles = bundles
        self.high_mode = high_mode
        self.low_mode = low_mode
        self.explore = explore
        self.obs_scale = obs_scale
        self.name = name
        self._prev_s: np.ndarray | None = None

    def reset(self) -> None:
        self._prev_s = None
        if self.bundles is not None:
            if self.bundles.high is not None and self.bundles.high.ou is not None:
                self.bundles.high.ou.reset()
            if self.bundles.low is not None:
                for b in self.bundles.low:
                    if b.ou is not None:
                        b.ou.reset()

    def _scaled_obs(self, network, trips, state, features):
        scale = self.obs_scale
        if scale is None:
            scale = default_obs_scale(trips)
        high = observe_high(network, trips, state, self.partition, features=features) * scale[0]
        low = []
        for k in range(self.partition.count):
            raw = observe_low(network, trips, state, self.partition, k, features=features)
            low.append(scale_low_obs(raw, scale))
        return high, low

    def perturbation(self, network, trips, state):
        features = edge_features(network, trips, state, self._prev_s)
        self._prev_s = features.s
        low_obs = None
        if self.high_mode == "rl":
            high_obs, low_obs = self._scaled_obs(network, trips, state, features)
            raw, _ = forward(self.bundles.high.actor, high_obs)
            if self.explore and self.bundles.high_noise and self.bundles.high.ou is not None:
                raw = raw + self.bundles.high.ou.sample()
            b_frac = normalize_budget(raw, self.bundles.head, 1.0)
            b_hat = self.budget * b_frac
        else:
            b_hat = proportional_allocation(trips, state, self.partition, self.budget)
            b_frac = (
                b_hat / self.budget
                if self.budget > 0
                else np.full(self.partition.count, 1.0 / self.partition.count)
            )
        if self.low_mode == "rl":
            if low_obs is None:
                _, low_obs = self._scaled_obs(network, trips, state, features)
            act = _act_low(
                self.bundles, low_obs, b_frac, b_hat, network.edge_count, self.explore
            )
            return act.a
        a = np.zeros(network.edge_count, dtype=np.float64)
        for k in range(self.partition.count):
            a += local_greedy(
                network, trips, state, self.partition, k, float(b_hat[k]), demand=features.s
            )
        return a


class FlatDdpgPolicy(AttackPolicy):
    """Single agent over all edges; the non-hierarchical trained baseline."""

    name = "ddpg"

    def __init__(self, bundle: AgentBundle, budget: float, *, explore: bool = False, obs_scale=None):
        if budget < 0:
            raise ValueError("budget must be nonnegative")
        self.bundle = bundle
        self.budget = float(budget)
        self.explore = explore
        self.obs_scale = obs_scale
        self._prev_s: np.ndarray | None = None

    def reset(self) -> None:
        self._prev_s = None
        if self.bundle.ou is not None:
            self.bundle.ou.reset()

    def perturbation(self, network, trips, state):
        features = edge_features(network, trips, state, self._prev_s)
        self._prev_s = features.s
        scale = self.obs_scale if self.obs_scale is not None else default_obs_scale(trips)
        obs = scale_low_obs(flat_edge_obs(features), scale)
        raw, _ = forward(self.bundle.actor, obs)
        if self.explore:
            raw = raw + self.bundle.ou.sample()
        frac = normalize_budget(raw, self.bundle.action_head or "softmax", 1.0)
        return frac * self.budget


def flat_edge_obs(features: EdgeFeatures) -> np.ndarray:
    """All-edge observation for the flat agent, same per-edge layout."""
    return np.stack(
        [features.s, features.n, features.s_hat, features.m, features.s_prev], axis=1
    ).ravel()


def default_obs_scale(trips: list[Trip]) -> np.ndarray:
    """(count scale, mass scale): counts per fleet, mass per fleet-horizon."""
    fleet = max(total_demand(trips), 1.0)
    return np.array([1.0 / fleet, 1.0 / (fleet * 200.0)])


def scale_low_obs(raw: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Apply count/mass scaling to a flattened per-edge feature vector."""
    out = raw * scale[0]
    out[3::5] = raw[3::5] * scale[1]
    return out


# ---------------------------------------------------------------------------
# training


@dataclass
class HmarlConfig:
    """Hyperparameters for the trainers; defaults are the shipped settings.

    The low level runs on a slower actor and a longer horizon than the high
    level: validate() warns when a configuration inverts that.
    """

    gamma_high: float = 0.90
    gamma_low: float = 0.99
    lr_actor_high: float = 1e-3
    lr_critic_high: float = 1e-3
    lr_actor_low: float = 1e-4
    lr_critic_low: float = 1e-3
    tau: float = 0.01
    buffer_capacity: int = 100_000
    batch_size: int = 128
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    episodes: int = 300
    horizon: int = 200
    hidden: tuple[int, ...] = (64, 64)
    normalize_head: str = "softmax"
    critic_head: str = "relu"
    high_level_noise: bool = True
    full_low_critics: bool = False
    demand_jitter: float = 0.05
    gamma_eval: float = 0.99

    def validate(self) -> None:
        if self.lr_actor_low >= self.lr_actor_high:
            warnings.warn(
                "low-level actor learning rate should be below the high-level one",
                stacklevel=2,
            )
        if self.gamma_low <= self.gamma_high:
            warnings.warn(
                "low-level discount should exceed the high-level discount",
                stacklevel=2,
            )
        if not 0 < self.gamma_high < 1 or not 0 < self.gamma_low < 1:
            raise ValueError("discounts must lie in (0, 1)")
        if self.normalize_head not in ("softmax", "l1relu"):
            raise ValueError(f"unknown normalization head {self.normalize_head!r}")


@dataclass
class TrainResult:
    """Trained policy plus the per-episode training log."""

    policy: AttackPolicy
    bundles: HmarlBundles | None
    flat_bundle: AgentBundle | None
    log_rows: list[dict]


LOG_COLUMNS = (
    "episode",
    "steps",
    "undiscounted_objective",
    "discounted_objective",
    "critic_loss_high",
    "mean_critic_loss_low",
    "wallclock_s",
)


def _episode_factors(rng: np.random.Generator, count: int, jitter: float) -> np.ndarray:
    if jitter == 0:
        return np.ones(count)
    return 1.0 + jitter * rng.choice([-1.0, 1.0], size=count)


def train_hmarl(
    network: RoadNetwork,
    trips: list[Trip],
    partition,
    budget: float,
    config: HmarlConfig,
    seed: int,
    *,
    high_mode: str = "rl",
    low_mode: str = "rl",
) -> TrainResult:
    """Train the hierarchy (or one level of it) by simultaneous off-policy
    updates at every environment step.

    high_mode/low_mode select a trained agent ("rl") or its heuristic
    stand-in ("proportional" above, "greedy" below). Deterministic in all
    arguments; every random stream derives from the seed.
    """
    config.validate()
    if high_mode not in ("rl", "proportional") or low_mode not in ("rl", "greedy"):
        raise ValueError(f"unsupported mode pair ({high_mode!r}, {low_mode!r})")
    if high_mode != "rl" and low_mode != "rl":
        raise ValueError("at least one level must be trained")
    rng_init = derive_rng(seed, "net-init")
    rng_noise = derive_rng(seed, "noise")
    rng_sample = derive_rng(seed, "sampling")
    rng_demand = derive_rng(seed, "demand")

    kcomp = partition.count
    scale = default_obs_scale(trips)
    reward_scale = scale[0]
    head = config.normalize_head

    high = None
    if high_mode == "rl":
        high = make_agent(
            2 * kcomp,
            kcomp,
            config.hidden,
            rng_init,
            gamma=config.gamma_high,
            lr_actor=config.lr_actor_high,
            lr_critic=config.lr_critic_high,
            tau=config.tau,
            action_head=head,
            action_total=1.0,
            critic_head=config.critic_head,
            ou_theta=config.ou_theta,
            ou_sigma=config.ou_sigma,
            noise_rng=rng_noise if config.high_level_noise else None,
        )
    low = None
    if low_mode == "rl":
        low = []
        joint_width = sum(len(idx) for idx in partition.edges_by_component)
        for k in range(kcomp):
            e_k = len(partition.edges_by_component[k])
            obs_dim = 5 * e_k + 1
            critic_obs = 2 * kcomp + obs_dim if config.full_low_critics else None
            critic_act = joint_width if config.full_low_critics else None
            low.append(
                make_agent(
                    obs_dim,
                    e_k,
                    config.hidden,
                    rng_init,
                    gamma=config.gamma_low,
                    lr_actor=config.lr_actor_low,
                    lr_critic=config.lr_critic_low,
                    tau=config.tau,
                    action_head=head,
                    action_total=1.0,
                    critic_head=config.critic_head,
                    critic_obs_dim=critic_obs,
                    critic_act_dim=critic_act,
                    ou_theta=config.ou_theta,
                    ou_sigma=config.ou_sigma,
                    noise_rng=rng_noise,
                )
            )
    bundles = HmarlBundles(
        high=high,
        low=low,
        edge_index=partition.edges_by_component,
        head=head,
        high_noise=config.high_level_noise,
    )

    high_buffer = ReplayBuffer(config.buffer_capacity, rng_sample) if high is not None else None
    low_buffer = ReplayBuffer(config.buffer_capacity, rng_sample) if low is not None else None

    log_rows: list[dict] = []
    start = time.perf_counter()
    for episode in range(config.episodes):
        factors = _episode_factors(rng_demand, len(trips), config.demand_jitter)
        trips_ep = scale_demand(trips, factors)
        state = initial_state(trips_ep)
        if high is not None and high.ou is not None:
            high.ou.reset()
        if low is not None:
            for b in low:
                b.ou.reset()
        features = edge_features(network, trips_ep, state)
        remaining: list[float] = []
        losses_high: list[float] = []
        losses_low: list[float] = []
        pending: dict | None = None

        def high_action(feats, state_now):
            if high is not None:
                obs_h = (
                    observe_high(network, trips_ep, state_now, partition, features=feats)
                    * scale[0]
                )
                raw, _ = forward(high.actor, obs_h)
                if high.ou is not None:
                    raw = raw + high.ou.sample()
                return normalize_budget(raw, head, 1.0), obs_h
            obs_h = (
                observe_high(network, trips_ep, state_now, partition, features=feats)
                * scale[0]
            )
            alloc = proportional_allocation(trips_ep, state_now, partition, budget)
            frac = alloc / budget if budget > 0 else np.full(kcomp, 1.0 / kcomp)
            return frac, obs_h

        while state.t < config.horizon and not state.all_arrived:
            b_frac, obs_h = high_action(features, state)
            b_hat = budget * b_frac
            low_obs = [
                scale_low_obs(
                    observe_low(network, trips_ep, state, partition, k, features=features),
                    scale,
                )
                for k in range(kcomp)
            ]
            if low is not None:
                act = _act_low(bundles, low_obs, b_frac, b_hat, network.edge_count, explore=True)
                a = act.a
            else:
                act = None
                a = np.zeros(network.edge_count)
                for k in range(kcomp):
                    a += local_greedy(
                        network, trips_ep, state, partition, k, float(b_hat[k]), demand=features.s
                    )
            if pending is not None:
                for k in range(kcomp):
                    pending["per_agent"][k].next_obs = np.concatenate(
                        [low_obs[k], [b_frac[k]]]
                    )
                low_buffer.add(
                    JointExperience(
                        per_agent=pending["per_agent"],
                        global_obs=pending["global_obs"],
                        next_global_obs=obs_h,
                        joint_action=pending["joint_action"],
                    )
                )
                pending = None

            next_state, metrics = step(network, trips_ep, state, a, w=features.w)
            r_high_val = metrics.remaining_total * reward_scale
            r_low_vals = metrics.component_vehicle_counts(partition) * reward_scale
            terminal = next_state.all_arrived
            remaining.append(metrics.remaining_total)
            next_features = edge_features(network, trips_ep, next_state, prev_s=features.s)
            next_obs_h = (
                observe_high(network, trips_ep, next_state, partition, features=next_features)
                * scale[0]
            )

            if high is not None:
                high_buffer.add(
                    Experience(
                        obs=obs_h,
                        action=b_frac,
                        reward=r_high_val,
                        next_obs=next_obs_h,
                        terminal=terminal,
                    )
                )
            if low is not None:
                pending = {
                    "per_agent": [
                        Experience(
                            obs=act.low_inputs[k],
                            action=act.a_frac[k],
                            reward=float(r_low_vals[k]),
                            next_obs=None,
                            terminal=terminal,
                        )
                        for k in range(kcomp)
                    ],
                    "global_obs": obs_h,
                    "joint_action": np.concatenate(act.a_frac),
                }

            if high is not None and len(high_buffer) >= config.batch_size:
                loss, _ = update_ddpg(high, high_buffer.sample(config.batch_size), config.gamma_high)
                losses_high.append(loss)
            if low is not None and len(low_buffer) >= config.batch_size:
                res = update_maddpg(
                    low,
                    low_buffer.sample(config.batch_size),
                    config.gamma_low,
                    full_critics=config.full_low_critics,
                )
                losses_low.append(float(np.mean([r[0] for r in res])))

            state = next_state
            features = next_features

        if pending is not None:
            # episode ended with one low-level record open; close it with the
            # noise-free budget split the policy would emit in the final state
            final_low_obs = [
                scale_low_obs(
                    observe_low(network, trips_ep, state, partition, k, features=features),
                    scale,
                )
                for k in range(kcomp)
            ]
            if high is not None:
                raw, _ = forward(high.actor,
                    observe_high(network, trips_ep, state, partition, features=features) * scale[0])
                b_last = normalize_budget(raw, head, 1.0)
            else:
                alloc = proportional_allocation(trips_ep, state, partition, budget)
                b_last = alloc / budget if budget > 0 else np.full(kcomp, 1.0 / kcomp)
            for k in range(kcomp):
                pending["per_agent"][k].next_obs = np.concatenate([final_low_obs[k], [b_last[k]]])
            low_buffer.add(
                JointExperience(
                    per_agent=pending["per_agent"],
                    global_obs=pending["global_obs"],
                    next_global_obs=observe_high(
                        network, trips_ep, state, partition, features=features
                    )
                    * scale[0],
                    joint_action=pending["joint_action"],
                )
            )
            pending = None

        undiscounted = float(np.sum(remaining))
        discounted = float(
            sum(config.gamma_eval**i * r for i, r in enumerate(remaining))
        )
        log_rows.append(
            {
                "episode": episode,
                "steps": len(remaining),
                "undiscounted_objective": undiscounted,
                "discounted_objective": discounted,
                "critic_loss_high": float(np.mean(losses_high)) if losses_high else float("nan"),
                "mean_critic_loss_low": float(np.mean(losses_low)) if losses_low else float("nan"),
                "wallclock_s": time.perf_counter() - start,
            }
        )

    name = {
        ("rl", "rl"): "hmarl",
        ("proportional", "rl"): "ablation-low",
        ("rl", "greedy"): "ablation-high",
    }[(high_mode, low_mode)]
    policy = HmarlAttackPolicy(
        partition,
        budget,
        bundles=bundles,
        high_mode=high_mode,
        low_mode=low_mode,
        explore=False,
        obs_scale=scale,
        name=name,
    )
    return TrainResult(policy=policy, bundles=bundles, flat_bundle=None, log_rows=log_rows)


def train_network_ddpg(
    network: RoadNetwork,
    trips: list[Trip],
    budget: float,
    config: HmarlConfig,
    seed: int,
) -> TrainResult:
    """Train the flat single-agent baseline over all edges."""
    config.validate()
    rng_init = derive_rng(seed, "net-init")
    rng_noise = derive_rng(seed, "noise")
    rng_sample = derive_rng(seed, "sampling")
    rng_demand = derive_rng(seed, "demand")
    scale = default_obs_scale(trips)
    reward_scale = scale[0]
    e_count = network.edge_count
    bundle = make_agent(
        5 * e_count,
        e_count,
        config.hidden,
        rng_init,
        gamma=config.gamma_low,
        lr_actor=config.lr_actor_low,
        lr_critic=config.lr_critic_low,
        tau=config.tau,
        action_head=config.normalize_head,
        action_total=1.0,
        critic_head=config.critic_head,
        ou_theta=config.ou_theta,
        ou_sigma=config.ou_sigma,
        noise_rng=rng_noise,
    )
    buffer = ReplayBuffer(config.buffer_capacity, rng_sample)
    log_rows: list[dict] = []
    start = time.perf_counter()
    for episode in range(config.episodes):
        factors = _episode_factors(rng_demand, len(trips), config.demand_jitter)
        trips_ep = scale_demand(trips, factors)
        state = initial_state(trips_ep)
        bundle.ou.reset()
        features = edge_features(network, trips_ep, state)
        remaining: list[float] = []
        losses: list[float] = []
        while state.t < config.horizon and not state.all_arrived:
            obs = scale_low_obs(flat_edge_obs(features), scale)
            raw, _ = forward(bundle.actor, obs)
            raw = raw + bundle.ou.sample()
            frac = normalize_budget(raw, config.normalize_head, 1.0)
            a = frac * budget
            next_state, metrics = step(network, trips_ep, state, a, w=features.w)
            next_features = edge_features(network, trips_ep, next_state, prev_s=features.s)
            next_obs = scale_low_obs(flat_edge_obs(next_features), scale)
            remaining.append(metrics.remaining_total)
            buffer.add(
                Experience(
                    obs=obs,
                    action=frac,
                    reward=metrics.remaining_total * reward_scale,
                    next_obs=next_obs,
                    terminal=next_state.all_arrived,
                )
            )
            if len(buffer) >= config.batch_size:
                loss, _ = update_ddpg(bundle, buffer.sample(config.batch_size), config.gamma_low)
                losses.append(loss)
            state = next_state
            features = next_features
        undiscounted = float(np.sum(remaining))
        discounted = float(sum(config.gamma_eval**i * r for i, r in enumerate(remaining)))
        log_rows.append(
            {
                "episode": episode,
                "steps": len(remaining),
                "undiscounted_objective": undiscounted,
                "discounted_objective": discounted,
                "critic_loss_high": float("nan"),
                "mean_critic_loss_low": float(np.mean(losses)) if losses else float("nan"),
                "wallclock_s": time.perf_counter() - start,
            }
        )
    policy = FlatDdpgPolicy(bundle, budget, explore=False, obs_scale=scale)
    return TrainResult(policy=policy, bundles=None, flat_bundle=bundle, log_rows=log_rows)
