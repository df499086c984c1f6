"""Partitioning the road graph into spatial components for decomposed attacks.

Nodes are clustered around medoids under symmetrized free-flow shortest-path
distance; each edge joins the component of its source node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import RoadNetwork
from .simulator import shortest_tree

__all__ = ["Partition", "free_flow_distances", "kmeans_cluster", "partition_to_text"]


@dataclass(frozen=True)
class Partition:
    """Disjoint node components covering the graph, plus induced edge groups."""

    count: int
    node_component: np.ndarray
    edge_component: np.ndarray
    medoids: tuple[int, ...]
    cost_history: tuple[float, ...]
    nodes_by_component: tuple[np.ndarray, ...]
    edges_by_component: tuple[np.ndarray, ...]

    @classmethod
    def from_labels(
        cls,
        network: RoadNetwork,
        node_component,
        medoids: tuple[int, ...] = (),
        cost_history: tuple[float, ...] = (),
    ) -> "Partition":
        node_component = np.asarray(node_component, dtype=np.int64)
        if node_component.shape != (network.node_count,):
            raise ValueError("one component label per node required")
        count = int(node_component.max()) + 1 if len(node_component) else 0
        if count < 1:
            raise ValueError("partition needs at least one component")
        if node_component.min() < 0:
            raise ValueError("component labels must be nonnegative")
        for k in range(count):
            if not np.any(node_component == k):
                raise ValueError(f"component {k} has no nodes")
        edge_component = node_component[network.src]
        return cls(
            count=count,
            node_component=node_component,
            edge_component=edge_component,
            medoids=medoids,
            cost_history=cost_history,
            nodes_by_component=tuple(
                np.nonzero(node_component == k)[0] for k in range(count)
            ),
            edges_by_component=tuple(
                np.nonzero(edge_component == k)[0] for k in range(count)
            ),
        )


def free_flow_distances(network: RoadNetwork) -> np.ndarray:
    """All-pairs shortest-path distance matrix under free-flow times."""
    dist = np.empty((network.node_count, network.node_count), dtype=np.float64)
    for v in range(network.node_count):
        d, _ = shortest_tree(network, network.free_flow_time, v)
        dist[v] = d
    return dist


def kmeans_cluster(network: RoadNetwork, k: int, seed: int) -> Partition:
    """Medoid-based Lloyd clustering of nodes by free-flow distance.

    Distances are symmetrized as (d(u,v) + d(v,u)) / 2. Initial medoids are
    k distinct nodes drawn by the seeded generator; assignment ties go to the
    lowest component id, medoid ties to the lowest node id. An emptied
    component is reseeded with the node farthest from its assigned medoid.
    Deterministic in (network, k, seed).
    """
    n = network.node_count
    if not 1 <= k <= n:
        raise ValueError(f"component count {k} outside 1..{n}")
    dist = free_flow_distances(network)
    if not np.isfinite(dist).all():
        raise ValueError("network must be strongly connected for clustering")
    sym = (dist + dist.T) / 2.0
    rng = np.random.default_rng(seed)
    medoids = np.sort(rng.choice(n, size=k, replace=False))
    assign = np.full(n, -1, dtype=np.int64)
    costs: list[float] = []
    for _ in range(100):
        new_assign = np.argmin(sym[:, medoids], axis=1)
        # reseed empty components with the node farthest from its own medoid
        for _ in range(k):
            present = np.bincount(new_assign, minlength=k) > 0
            if present.all():
                break
            empty = int(np.nonzero(~present)[0][0])
            to_own = sym[np.arange(n), medoids[new_assign]]
            medoids[empty] = int(np.argmax(to_own))
            new_assign = np.argmin(sym[:, medoids], axis=1)
        costs.append(float(sym[np.arange(n), medoids[new_assign]].sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for comp in range(k):
            members = np.nonzero(assign == comp)[0]
            within = sym[np.ix_(members, members)].sum(axis=1)
            medoids[comp] = int(members[int(np.argmin(within))])
    return Partition.from_labels(
        network, assign, medoids=tuple(int(m) for m in medoids), cost_history=tuple(costs)
    )


def partition_to_text(partition: Partition) -> str:
    """Plain node-to-component map, one `node component` pair per line."""
    lines = [f"~ components {partition.count}"]
    for m in partition.medoids:
        lines.append(f"~ medoid {m}")
    lines.extend(
        f"{v} {int(c)}" for v, c in enumerate(partition.node_component)
    )
    return "\n".join(lines) + "\n"
