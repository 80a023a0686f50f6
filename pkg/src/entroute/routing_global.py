"""Greedy multipath routing with global link-state knowledge.

In each slot the rule repeatedly extracts a shortest path over the
surviving up-edges between the endpoints, consumes that path's edges,
and stops when the endpoints disconnect. Every extracted path of k
hops contributes q^(k-1) to the slot value (k-1 swaps, each succeeding
with probability q, evaluated in expectation rather than sampled).

The number of extracted paths can never exceed the smaller endpoint
degree, so the slot value is sandwiched between q^(k1-1) and
4*q^(k1-1) on the grid, where k1 is the shortest-path length; the
per-slot quantity 4*q^(k1-1) upper-bounds what any routing protocol
could deliver.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .engine import (
    LinkInstance,
    RateEstimate,
    SimParams,
    check_endpoints,
    run_batched,
)
from .topology import Topology


@dataclass(frozen=True)
class PathSet:
    """Edge-disjoint paths extracted by the greedy rule, in order."""

    paths: tuple[tuple[int, ...], ...]  # edge-id sequences, Alice -> Bob
    lengths: tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.paths)


@dataclass(frozen=True)
class GlobalRateSummary:
    """Joint greedy-rate / upper-bound estimates over shared slots."""

    greedy: RateEstimate
    optimal_upper_bound: RateEstimate
    disconnect_prob: RateEstimate


@dataclass(frozen=True)
class ShortestPathStat:
    """Summary of the shortest-path statistic over slots.

    mean_q_weight is E[q^(n_SP - 1)] with disconnected slots counting
    zero; disconnect_prob tracks how often no up-path exists.
    """

    mean_q_weight: RateEstimate
    disconnect_prob: RateEstimate


def _bfs_distances(topology: Topology, up: np.ndarray, src: int) -> np.ndarray:
    dist = np.full(topology.num_nodes, -1, dtype=np.int64)
    dist[src] = 0
    queue: deque[int] = deque([src])
    inc_e = topology.incident_edges
    inc_n = topology.neighbour_nodes
    deg = topology.degrees
    while queue:
        u = queue.popleft()
        for s in range(deg[u]):
            e = inc_e[u, s]
            if up[e] and dist[inc_n[u, s]] < 0:
                dist[inc_n[u, s]] = dist[u] + 1
                queue.append(int(inc_n[u, s]))
    return dist


def greedy_route(
    topology: Topology, instance: LinkInstance, alice: int, bob: int
) -> PathSet:
    """Reference implementation of the greedy rule for one slot.

    Ties between equal-length shortest paths are broken by always
    stepping to the smallest node id at the previous BFS depth while
    walking back from Bob.
    """
    check_endpoints(topology, alice, bob)
    up = instance.up.copy()
    inc_e = topology.incident_edges
    inc_n = topology.neighbour_nodes
    deg = topology.degrees
    paths: list[tuple[int, ...]] = []
    while True:
        dist = _bfs_distances(topology, up, alice)
        if dist[bob] < 0:
            break
        edges: list[int] = []
        node = bob
        while node != alice:
            d = dist[node]
            # slots are sorted by neighbour id, so the first hit is the
            # smallest-id predecessor
            for s in range(deg[node]):
                e = int(inc_e[node, s])
                if up[e] and dist[inc_n[node, s]] == d - 1:
                    up[e] = 0
                    edges.append(e)
                    node = int(inc_n[node, s])
                    break
            else:
                raise AssertionError("BFS backtrack lost its predecessor")
        edges.reverse()
        paths.append(tuple(edges))
    return PathSet(
        paths=tuple(paths), lengths=tuple(len(p) for p in paths)
    )


def instance_rate_global(lengths, q: float) -> float:
    """Expected ebits per slot given the extracted path lengths."""
    return float(sum(q ** (k - 1) for k in lengths))


def _greedy_arrays(topology: Topology, alice: int, bob: int):
    check_endpoints(topology, alice, bob)
    max_paths = int(min(topology.degree(alice), topology.degree(bob)))
    return (
        topology.incident_edges,
        topology.neighbour_nodes,
        topology.degrees,
        max(max_paths, 1),
    )


def estimate_global_rates(
    topology: Topology,
    params: SimParams,
    alice: int,
    bob: int,
    workers: int = 1,
) -> GlobalRateSummary:
    """Greedy rate and optimal-protocol upper bound over shared slots.

    Sharing the sampled slots keeps the per-slot sandwich
    q^(k1-1) <= value <= 4*q^(k1-1) exact instance by instance.
    """
    inc_e, inc_n, deg, max_paths = _greedy_arrays(topology, alice, bob)
    cap = float(min(topology.degree(alice), topology.degree(bob)))
    q = params.q

    def batch_eval(up_mat, rngs, start):
        scores, k1, _, _ = _kernels.greedy_batch(
            up_mat, inc_e, inc_n, deg, alice, bob, q, max_paths)
        connected = k1 >= 0
        ub = np.where(connected, cap * q ** (np.maximum(k1, 1) - 1.0), 0.0)
        return np.stack([scores, ub, (~connected).astype(np.float64)], axis=1)

    greedy, upper, disc = run_batched(
        topology, params, batch_eval, workers=workers, components=3)
    return GlobalRateSummary(
        greedy=greedy, optimal_upper_bound=upper, disconnect_prob=disc)


def estimate_greedy_rate(
    topology: Topology,
    params: SimParams,
    alice: int,
    bob: int,
    workers: int = 1,
) -> RateEstimate:
    """Mean ebits per slot delivered by the greedy global-knowledge rule."""
    return estimate_global_rates(topology, params, alice, bob, workers).greedy


def estimate_optimal_upper_bound(
    topology: Topology,
    params: SimParams,
    alice: int,
    bob: int,
    workers: int = 1,
) -> RateEstimate:
    """Mean of the per-slot routing upper bound min_deg * q^(n_SP - 1)."""
    inc_e = topology.incident_edges
    inc_n = topology.neighbour_nodes
    deg = topology.degrees
    check_endpoints(topology, alice, bob)
    cap = float(min(topology.degree(alice), topology.degree(bob)))
    q = params.q

    def batch_eval(up_mat, rngs, start):
        k1 = _kernels.shortest_path_batch(up_mat, inc_e, inc_n, deg, alice, bob)
        return np.where(k1 >= 0, cap * q ** (np.maximum(k1, 1) - 1.0), 0.0)

    return run_batched(topology, params, batch_eval, workers=workers)[0]


def shortest_path_stat(
    topology: Topology,
    params: SimParams,
    alice: int,
    bob: int,
    workers: int = 1,
) -> ShortestPathStat:
    """Distribution summary of the shortest up-path length statistic."""
    inc_e = topology.incident_edges
    inc_n = topology.neighbour_nodes
    deg = topology.degrees
    check_endpoints(topology, alice, bob)
    q = params.q

    def batch_eval(up_mat, rngs, start):
        k1 = _kernels.shortest_path_batch(up_mat, inc_e, inc_n, deg, alice, bob)
        connected = k1 >= 0
        w = np.where(connected, q ** (np.maximum(k1, 1) - 1.0), 0.0)
        return np.stack([w, (~connected).astype(np.float64)], axis=1)

    weight, disc = run_batched(
        topology, params, batch_eval, workers=workers, components=2)
    return ShortestPathStat(mean_q_weight=weight, disconnect_prob=disc)
