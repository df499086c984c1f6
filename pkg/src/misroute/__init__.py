"""Travel-time falsification attacks on shortest-path road routing.

A discrete-time traffic simulator where vehicles follow shortest paths under
observed (adversarially perturbed) travel times, plus heuristic and
hierarchical reinforcement-learning attackers that learn how to spend a
fixed per-step perturbation budget.
"""

__version__ = "0.1.0"

from .network import (
    EdgeSpec,
    RoadNetwork,
    Trip,
    TntpParseError,
    load_network,
    load_trips,
    parse_tntp_net,
    parse_tntp_trips,
    scale_demand,
    total_demand,
)
from .simulator import (
    AtNode,
    BudgetContractError,
    EpisodeResult,
    OnEdge,
    SimState,
    congested_times,
    edge_travel_time,
    initial_state,
    observed_times,
    run_episode,
    shortest_path,
    step,
)
from .attack import (
    AttackPolicy,
    DecomposedGreedyAttack,
    GreedyAttack,
    NullAttack,
    count_edge_demand,
    greedy_attack,
    local_greedy,
    proportional_allocation,
)
from .decompose import Partition, free_flow_distances, kmeans_cluster

__all__ = [
    "__version__",
    "EdgeSpec",
    "RoadNetwork",
    "Trip",
    "TntpParseError",
    "load_network",
    "load_trips",
    "parse_tntp_net",
    "parse_tntp_trips",
    "scale_demand",
    "total_demand",
    "AtNode",
    "OnEdge",
    "SimState",
    "BudgetContractError",
    "EpisodeResult",
    "initial_state",
    "edge_travel_time",
    "congested_times",
    "observed_times",
    "shortest_path",
    "step",
    "run_episode",
    "AttackPolicy",
    "NullAttack",
    "GreedyAttack",
    "DecomposedGreedyAttack",
    "count_edge_demand",
    "greedy_attack",
    "proportional_allocation",
    "local_greedy",
    "Partition",
    "free_flow_distances",
    "kmeans_cluster",
]
