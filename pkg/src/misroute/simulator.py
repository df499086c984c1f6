"""Discrete-time vehicle movement under falsified observed travel times.

Each step, every vehicle standing at a node picks the first edge of a
shortest path to its destination under the *observed* times (congested
times plus the adversarial perturbation), then traverses that edge for a
number of steps dictated by the *actual* congested time at entry. Edge
loads are read from the state at the start of the step, so a vehicle does
not count itself when entering an edge.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .network import RoadNetwork, Trip, trip_sizes

__all__ = [
    "AtNode",
    "OnEdge",
    "SimState",
    "StepMetrics",
    "EpisodeResult",
    "Path",
    "BudgetContractError",
    "initial_state",
    "edge_travel_time",
    "edge_loads",
    "congested_times",
    "observed_times",
    "shortest_tree",
    "shortest_path",
    "decider_paths",
    "step",
    "run_episode",
]


@dataclass(frozen=True)
class AtNode:
    node: int


@dataclass(frozen=True)
class OnEdge:
    edge: int
    remaining: int


class BudgetContractError(RuntimeError):
    """An attacker produced a perturbation violating its budget contract."""


@dataclass
class SimState:
    """Positions of all trips after `t` executed steps.

    Exactly one of at_node[r] / on_edge[r] is >= 0 per trip. `remaining` is
    the number of further steps the trip stays on its edge (>= 1 on an edge,
    0 at a node). `frozen` marks trips whose destination was unreachable at
    decision time; they stay at their node and never arrive.
    """

    t: int
    at_node: np.ndarray
    on_edge: np.ndarray
    remaining: np.ndarray
    arrived: np.ndarray
    frozen: np.ndarray

    def copy(self) -> "SimState":
        return SimState(
            t=self.t,
            at_node=self.at_node.copy(),
            on_edge=self.on_edge.copy(),
            remaining=self.remaining.copy(),
            arrived=self.arrived.copy(),
            frozen=self.frozen.copy(),
        )

    def location(self, r: int) -> AtNode | OnEdge:
        if self.on_edge[r] >= 0:
            return OnEdge(int(self.on_edge[r]), int(self.remaining[r]))
        return AtNode(int(self.at_node[r]))

    @property
    def trip_count(self) -> int:
        return len(self.at_node)

    @property
    def all_arrived(self) -> bool:
        return bool(self.arrived.all())


def initial_state(trips: list[Trip]) -> SimState:
    """Every trip at its origin node at t = 0."""
    n = len(trips)
    return SimState(
        t=0,
        at_node=np.array([t.origin for t in trips], dtype=np.int64),
        on_edge=np.full(n, -1, dtype=np.int64),
        remaining=np.zeros(n, dtype=np.int64),
        arrived=np.zeros(n, dtype=bool),
        frozen=np.zeros(n, dtype=bool),
    )


def edge_travel_time(edge, n: float) -> float:
    """Volume-delay time of one edge at load n."""
    if n < 0:
        raise ValueError("edge load must be nonnegative")
    return edge.free_flow_time * (1.0 + edge.b * (n / edge.capacity) ** edge.power)


def edge_loads(network: RoadNetwork, state: SimState, trips: list[Trip]) -> np.ndarray:
    """Total vehicles currently traversing each edge."""
    loads = np.zeros(network.edge_count, dtype=np.float64)
    mask = state.on_edge >= 0
    if mask.any():
        np.add.at(loads, state.on_edge[mask], trip_sizes(trips)[mask])
    return loads


def congested_times(network: RoadNetwork, state: SimState, trips: list[Trip]) -> np.ndarray:
    """Per-edge travel times given the current on-edge loads."""
    loads = edge_loads(network, state, trips)
    return network.free_flow_time * (
        1.0 + network.b * (loads / network.capacity) ** network.power
    )


def observed_times(w: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Times the vehicles see: actual plus injected perturbation."""
    w = np.asarray(w, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if w.shape != a.shape:
        raise ValueError(f"perturbation shape {a.shape} does not match edge count {w.shape}")
    return w + a


@dataclass(frozen=True)
class Path:
    """Alternating node/edge walk: nodes[i] -(edges[i])-> nodes[i+1]."""

    nodes: tuple[int, ...]
    edges: tuple[int, ...]
    cost: float


def shortest_tree(network: RoadNetwork, weights: np.ndarray, origin: int):
    """Single-source shortest paths with deterministic tie-breaking.

    Among equal-cost relaxations into a node, the lowest edge id wins.
    Returns (dist, pred_edge) arrays; pred_edge[origin] = -1 and
    pred_edge[v] = -1 with dist[v] = inf marks unreachable v.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (network.edge_count,):
        raise ValueError("one weight per edge required")
    if np.any(weights < 0):
        raise ValueError("edge weights must be nonnegative")
    dist = np.full(network.node_count, np.inf)
    pred = np.full(network.node_count, -1, dtype=np.int64)
    settled = np.zeros(network.node_count, dtype=bool)
    dist[origin] = 0.0
    heap: list[tuple[float, int]] = [(0.0, origin)]
    dst = network.dst
    out_edges = network.out_edges
    while heap:
        d, u = heapq.heappop(heap)
        if settled[u]:
            continue
        settled[u] = True
        for e in out_edges[u]:
            v = dst[e]
            if settled[v]:
                continue
            nd = d + weights[e]
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = e
                heapq.heappush(heap, (nd, v))
            elif nd == dist[v] and pred[v] >= 0 and e < pred[v]:
                pred[v] = e
    return dist, pred


def path_from_tree(network: RoadNetwork, dist, pred, origin: int, dest: int) -> Path | None:
    if not np.isfinite(dist[dest]):
        return None
    nodes = [dest]
    edges = []
    v = dest
    while v != origin:
        e = int(pred[v])
        edges.append(e)
        v = int(network.src[e])
        nodes.append(v)
    return Path(tuple(reversed(nodes)), tuple(reversed(edges)), float(dist[dest]))


def shortest_path(network: RoadNetwork, weights, origin: int, dest: int) -> Path | None:
    """Cheapest origin->dest path under the given weights, or None if unreachable."""
    if origin == dest:
        return Path((origin,), (), 0.0)
    dist, pred = shortest_tree(network, weights, origin)
    return path_from_tree(network, dist, pred, origin, dest)


def decider_paths(network: RoadNetwork, trips: list[Trip], state: SimState, weights):
    """Chosen paths for every trip that routes this step under `weights`.

    Yields (trip index, Path or None) for each unarrived, unfrozen trip
    standing at a node; None means its destination is unreachable.
    """
    trees: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    out = []
    for r in range(state.trip_count):
        if state.arrived[r] or state.frozen[r] or state.at_node[r] < 0:
            continue
        origin = int(state.at_node[r])
        if origin not in trees:
            trees[origin] = shortest_tree(network, weights, origin)
        dist, pred = trees[origin]
        out.append((r, path_from_tree(network, dist, pred, origin, trips[r].dest)))
    return out


def _round_duration(w: float) -> int:
    # round half away from zero, then at least one step
    return max(1, int(math.floor(w + 0.5)))


@dataclass
class StepMetrics:
    """Everything observable about one executed step."""

    w: np.ndarray
    w_hat: np.ndarray
    edge_load: np.ndarray
    remaining_total: float
    edge_sizes: np.ndarray
    node_sizes: np.ndarray
    chosen_first_edge: dict[int, int] = field(default_factory=dict)
    newly_frozen: tuple[int, ...] = ()

    def component_vehicle_counts(self, partition) -> np.ndarray:
        """Unarrived vehicles per component, splitting by node/edge membership."""
        counts = np.zeros(partition.count, dtype=np.float64)
        np.add.at(counts, partition.node_component, self.node_sizes)
        np.add.at(counts, partition.edge_component, self.edge_sizes)
        return counts


def step(
    network: RoadNetwork,
    trips: list[Trip],
    state: SimState,
    a: np.ndarray,
    *,
    w: np.ndarray | None = None,
) -> tuple[SimState, StepMetrics]:
    """Advance the simulation one step under perturbation `a`.

    `w` may carry precomputed congested times for the incoming state; when
    given it must equal congested_times(network, state, trips).
    """
    loads = edge_loads(network, state, trips)
    if w is None:
        w = network.free_flow_time * (
            1.0 + network.b * (loads / network.capacity) ** network.power
        )
    w_hat = observed_times(w, a)
    sizes = trip_sizes(trips)

    new = state.copy()
    new.t = state.t + 1

    # vehicles partway along an edge advance first; those with one step left
    # stand at the edge head and arrive if that is their destination
    on = state.on_edge >= 0
    landing = on & (state.remaining == 1)
    rolling = on & (state.remaining > 1)
    new.remaining[rolling] -= 1
    for r in np.nonzero(landing)[0]:
        head = int(network.dst[state.on_edge[r]])
        new.on_edge[r] = -1
        new.remaining[r] = 0
        new.at_node[r] = head
        if head == trips[r].dest:
            new.arrived[r] = True

    # vehicles at a node route under observed times, then enter their first
    # edge for a duration set by the actual congested time
    chosen: dict[int, int] = {}
    frozen_now: list[int] = []
    trees: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    first_edge_memo: dict[tuple[int, int], int] = {}
    for r in range(state.trip_count):
        if state.arrived[r] or state.frozen[r] or state.at_node[r] < 0:
            continue
        origin = int(state.at_node[r])
        dest = trips[r].dest
        key = (origin, dest)
        if key not in first_edge_memo:
            if origin not in trees:
                trees[origin] = shortest_tree(network, w_hat, origin)
            dist, pred = trees[origin]
            path = path_from_tree(network, dist, pred, origin, dest)
            first_edge_memo[key] = -1 if path is None else path.edges[0]
        e1 = first_edge_memo[key]
        if e1 < 0:
            new.frozen[r] = True
            frozen_now.append(r)
            continue
        new.at_node[r] = -1
        new.on_edge[r] = e1
        new.remaining[r] = _round_duration(float(w[e1]))
        chosen[r] = e1

    edge_sizes = np.zeros(network.edge_count, dtype=np.float64)
    on_new = new.on_edge >= 0
    if on_new.any():
        np.add.at(edge_sizes, new.on_edge[on_new], sizes[on_new])
    node_sizes = np.zeros(network.node_count, dtype=np.float64)
    at_new = (new.at_node >= 0) & ~new.arrived
    if at_new.any():
        np.add.at(node_sizes, new.at_node[at_new], sizes[at_new])
    remaining_total = float(np.sum(sizes[~new.arrived]))

    metrics = StepMetrics(
        w=w,
        w_hat=w_hat,
        edge_load=loads,
        remaining_total=remaining_total,
        edge_sizes=edge_sizes,
        node_sizes=node_sizes,
        chosen_first_edge=chosen,
        newly_frozen=tuple(frozen_now),
    )
    return new, metrics


@dataclass
class EpisodeResult:
    """Outcome of one simulated episode.

    remaining_per_step[i] is the unarrived vehicle total after executed step
    i, and discounted_objective = sum_i gamma**i * remaining_per_step[i].
    """

    discounted_objective: float
    remaining_per_step: np.ndarray
    steps_run: int
    all_arrived: bool
    any_unreachable: bool


def run_episode(
    network: RoadNetwork,
    trips: list[Trip],
    attacker,
    horizon: int = 200,
    gamma: float = 0.99,
) -> EpisodeResult:
    """Run one episode from the standard start under the given attacker.

    The attacker's perturbation is checked every step: nonnegative entries
    whose sum matches attacker.budget to within 1e-6.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    attacker.reset()
    budget = float(attacker.budget)
    state = initial_state(trips)
    remaining: list[float] = []
    any_unreachable = False
    while state.t < horizon and not state.all_arrived:
        a = np.asarray(attacker.perturbation(network, trips, state), dtype=np.float64)
        if a.shape != (network.edge_count,):
            raise BudgetContractError(
                f"attacker {attacker.name!r} returned shape {a.shape}, "
                f"expected ({network.edge_count},)"
            )
        if a.size and float(a.min()) < 0:
            raise BudgetContractError(
                f"attacker {attacker.name!r} produced a negative perturbation entry"
            )
        total = float(a.sum())
        if abs(total - budget) > 1e-6:
            raise BudgetContractError(
                f"attacker {attacker.name!r} spent {total!r}, budget is {budget!r}"
            )
        state, metrics = step(network, trips, state, a)
        remaining.append(metrics.remaining_total)
        if metrics.newly_frozen:
            any_unreachable = True
    remaining_arr = np.array(remaining, dtype=np.float64)
    objective = float(sum(gamma**i * rem for i, rem in enumerate(remaining)))
    return EpisodeResult(
        discounted_objective=objective,
        remaining_per_step=remaining_arr,
        steps_run=len(remaining),
        all_arrived=state.all_arrived,
        any_unreachable=any_unreachable,
    )
