"""Budget-constrained perturbation heuristics with full state observability.

Every policy spends exactly its budget each step (the simulator enforces
this), spreading it over edges in proportion to how much traffic currently
plans to use them.
"""

from __future__ import annotations

import numpy as np

from .network import RoadNetwork, Trip, trip_sizes
from .simulator import SimState, congested_times, decider_paths

__all__ = [
    "AttackPolicy",
    "NullAttack",
    "GreedyAttack",
    "DecomposedGreedyAttack",
    "count_edge_demand",
    "greedy_attack",
    "proportional_allocation",
    "local_greedy",
]


class AttackPolicy:
    """Per-step perturbation source.

    Subclasses set `name` and `budget` and implement perturbation(); the
    returned vector must be nonnegative with entries summing to the budget.
    reset() is called once at the start of every episode.
    """

    name: str = "abstract"
    budget: float = 0.0

    def reset(self) -> None:
        pass

    def perturbation(self, network: RoadNetwork, trips: list[Trip], state: SimState) -> np.ndarray:
        raise NotImplementedError


class NullAttack(AttackPolicy):
    """No perturbation at all; the unattacked baseline."""

    name = "none"
    budget = 0.0

    def perturbation(self, network, trips, state):
        return np.zeros(network.edge_count, dtype=np.float64)


def count_edge_demand(network: RoadNetwork, trips: list[Trip], state: SimState) -> np.ndarray:
    """Vehicles planning to cross each edge, absent any perturbation.

    A vehicle at a node contributes its size to every edge of its shortest
    path under the current congested times. Vehicles already on an edge or
    arrived contribute nothing.
    """
    w = congested_times(network, state, trips)
    demand = np.zeros(network.edge_count, dtype=np.float64)
    sizes = trip_sizes(trips)
    for r, path in decider_paths(network, trips, state, w):
        if path is None:
            continue
        for e in path.edges:
            demand[e] += sizes[r]
    return demand


def greedy_attack(network: RoadNetwork, trips: list[Trip], state: SimState, budget: float) -> np.ndarray:
    """Spread the whole budget over edges in proportion to planned usage.

    Falls back to a uniform spread when no vehicle plans to move.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    demand = count_edge_demand(network, trips, state)
    total = float(demand.sum())
    if total > 0:
        return demand * (budget / total)
    return np.full(network.edge_count, budget / network.edge_count, dtype=np.float64)


class GreedyAttack(AttackPolicy):
    """Network-wide proportional-to-demand heuristic."""

    name = "greedy"

    def __init__(self, budget: float):
        if budget < 0:
            raise ValueError("budget must be nonnegative")
        self.budget = float(budget)

    def perturbation(self, network, trips, state):
        return greedy_attack(network, trips, state, self.budget)


def proportional_allocation(trips: list[Trip], state: SimState, partition, budget: float) -> np.ndarray:
    """Split the budget across components by deciding vehicles.

    A vehicle is deciding when it stands at a node unarrived (and not frozen);
    it counts toward the component owning that node. With nobody deciding the
    split is uniform.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    sizes = trip_sizes(trips)
    deciding = np.zeros(partition.count, dtype=np.float64)
    mask = (state.at_node >= 0) & ~state.arrived & ~state.frozen
    for r in np.nonzero(mask)[0]:
        deciding[partition.node_component[state.at_node[r]]] += sizes[r]
    total = float(deciding.sum())
    if total > 0:
        return deciding * (budget / total)
    return np.full(partition.count, budget / partition.count, dtype=np.float64)


def local_greedy(
    network: RoadNetwork,
    trips: list[Trip],
    state: SimState,
    partition,
    k: int,
    component_budget: float,
    *,
    demand: np.ndarray | None = None,
    denominator: str = "component",
) -> np.ndarray:
    """Spend one component's budget over that component's edges by demand.

    Returns a full-length edge vector, zero outside component k. With
    denominator="component" the component budget is fully spent inside the
    component (uniformly when its demand is zero); "network" divides by the
    network-wide demand total instead, deliberately underspending, and is
    kept only for comparison runs.
    """
    if component_budget < 0:
        raise ValueError("component budget must be nonnegative")
    if denominator not in ("component", "network"):
        raise ValueError(f"unknown denominator mode {denominator!r}")
    if demand is None:
        demand = count_edge_demand(network, trips, state)
    member = partition.edges_by_component[k]
    a = np.zeros(network.edge_count, dtype=np.float64)
    local = demand[member]
    local_total = float(local.sum())
    if denominator == "network":
        total = float(demand.sum())
        if total > 0:
            a[member] = local * (component_budget / total)
        return a
    if local_total > 0:
        a[member] = local * (component_budget / local_total)
    elif len(member):
        a[member] = component_budget / len(member)
    return a


class DecomposedGreedyAttack(AttackPolicy):
    """Two-level heuristic: proportional split, then per-component greedy."""

    name = "decomposed-greedy"

    def __init__(self, partition, budget: float, *, denominator: str = "component"):
        if budget < 0:
            raise ValueError("budget must be nonnegative")
        self.partition = partition
        self.budget = float(budget)
        self.denominator = denominator

    def perturbation(self, network, trips, state):
        demand = count_edge_demand(network, trips, state)
        b_hat = proportional_allocation(trips, state, self.partition, self.budget)
        a = np.zeros(network.edge_count, dtype=np.float64)
        for k in range(self.partition.count):
            a += local_greedy(
                network,
                trips,
                state,
                self.partition,
                k,
                float(b_hat[k]),
                demand=demand,
                denominator=self.denominator,
            )
        if self.denominator == "network":
            # the network-wide denominator underspends; rescale to the full
            # budget, keeping its relative allocation, so the per-step spend
            # contract still holds in episode runs
            total = float(a.sum())
            if total > 0:
                a *= self.budget / total
            elif self.budget > 0:
                a[:] = self.budget / network.edge_count
        return a
