"""Shared builders and independent oracles for the test suite.

The oracles here (Bellman-Ford, exhaustive path enumeration,
Floyd-Warshall, finite differences) deliberately share no code with the
implementations they check.
"""

from pathlib import Path

import numpy as np

from misroute.network import EdgeSpec, RoadNetwork, Trip

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
SIOUX_NET = DATA_DIR / "SiouxFalls_net.tntp"
SIOUX_TRIPS = DATA_DIR / "SiouxFalls_trips.tntp"
DIAMOND_NET = DATA_DIR / "diamond_net.tntp"
DIAMOND_TRIPS = DATA_DIR / "diamond_trips.tntp"


def build_network(node_count, edge_rows):
    """edge_rows: (src, dst, free_flow_time, capacity, b, power) per edge."""
    edges = [
        EdgeSpec(index=i, src=s, dst=d, free_flow_time=t, capacity=c, b=b, power=p)
        for i, (s, d, t, c, b, p) in enumerate(edge_rows)
    ]
    return RoadNetwork.from_edges(node_count, edges)


def diamond():
    """Two routes 0->3: fast congestible top (via 1), slow wide bottom (via 2)."""
    net = build_network(
        4,
        [
            (0, 1, 1.0, 10.0, 3.0, 2.0),
            (1, 3, 1.0, 10.0, 3.0, 2.0),
            (0, 2, 3.0, 1e6, 0.0, 2.0),
            (2, 3, 3.0, 1e6, 0.0, 2.0),
        ],
    )
    trips = [Trip(0, 3, 20.0), Trip(1, 3, 20.0), Trip(2, 3, 35.0)]
    return net, trips


def single_edge(size=7.0, fft=3.0):
    net = build_network(2, [(0, 1, fft, 100.0, 0.15, 4.0)])
    return net, [Trip(0, 1, size)]


def bellman_ford(network, weights, origin):
    """Textbook relaxation; O(VE). Distances only."""
    dist = np.full(network.node_count, np.inf)
    dist[origin] = 0.0
    for _ in range(network.node_count - 1):
        changed = False
        for e in network.edges:
            if dist[e.src] + weights[e.index] < dist[e.dst]:
                dist[e.dst] = dist[e.src] + weights[e.index]
                changed = True
        if not changed:
            break
    return dist


def enumerate_min_cost(network, weights, origin, dest):
    """Minimum cost over all simple paths by DFS, or inf if none."""
    best = [np.inf]

    def walk(v, cost, seen):
        if v == dest:
            best[0] = min(best[0], cost)
            return
        for e in network.out_edges[v]:
            u = network.edges[e].dst
            if u in seen:
                continue
            walk(u, cost + weights[e], seen | {u})

    walk(origin, 0.0, {origin})
    return best[0]


def floyd_warshall_free_flow(network):
    n = network.node_count
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    for e in network.edges:
        dist[e.src, e.dst] = min(dist[e.src, e.dst], e.free_flow_time)
    for k in range(n):
        dist = np.minimum(dist, dist[:, k : k + 1] + dist[k : k + 1, :])
    return dist


def random_digraph(rng, max_nodes=50, integer_weights=True):
    """Random connected-ish digraph with positive weights."""
    n = int(rng.integers(2, max_nodes + 1))
    rows = []
    # a random spine so most pairs are reachable, then noise edges
    order = rng.permutation(n)
    for i in range(n - 1):
        rows.append((int(order[i]), int(order[i + 1])))
    extra = int(rng.integers(0, 3 * n))
    for _ in range(extra):
        s, d = int(rng.integers(0, n)), int(rng.integers(0, n))
        if s != d:
            rows.append((s, d))
    if integer_weights:
        w = rng.integers(1, 20, size=len(rows)).astype(float)
    else:
        w = rng.uniform(0.1, 10.0, size=len(rows))
    edges = [
        (s, d, float(w[i]), 100.0, 0.15, 4.0) for i, (s, d) in enumerate(rows)
    ]
    return build_network(n, edges), np.asarray(w, dtype=float)


def central_difference(f, x, eps=1e-5):
    """Gradient of scalar f at x by central differences."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = f(x)
        flat[i] = keep - eps
        lo = f(x)
        flat[i] = keep
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(1e-12, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / denom
