"""Closed-form baselines, bounds, and scaling fits.

Everything here is checkable without simulation: the linear-chain
rate, a max-flow upper bound on any routing rule, an analytic lower
bound for the local rule built from a boosted nearest-neighbour chain,
exponential-decay fits for rate-versus-distance series, and an exact
oracle that averages the simulated rules over every link configuration
of a small lattice.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import mpmath
import networkx as nx
import numpy as np

from .engine import LinkInstance, RateEstimate, check_endpoints
from .routing_global import greedy_route, instance_rate_global
from .routing_local import (
    DistanceMetric,
    _check_local_topology,
    enumerate_node_decisions,
)
from .topology import LinkModel, Topology

ORACLE_MAX_EDGES = 13


def linear_chain_rate(p: float, q: float, links: int) -> float:
    """End-to-end rate of a chain of `links` links: p**links * q**(links-1).

    Every link must come up in the slot and the links-1 interior swaps
    must all succeed (in expectation, q each).
    """
    if not 0.0 <= p <= 1.0 or not 0.0 <= q <= 1.0:
        raise ValueError("p and q must lie in [0, 1]")
    if links < 1:
        raise ValueError("links must be >= 1")
    return p**links * q ** (links - 1)


def _per_channel_probs(topology: Topology, link: LinkModel) -> np.ndarray:
    """Single-channel success probability per edge."""
    e = topology.num_edges
    if link.kind == "channel":
        return np.full(e, float(link.p0))
    if link.kind == "fibre":
        if np.isscalar(link.lengths):
            ls = np.full(e, float(link.lengths))
        else:
            ls = np.asarray(link.lengths, dtype=np.float64)
        return np.exp(-link.alpha * ls)
    # direct: the per-edge probability is read as the per-channel one
    return link.edge_probs(topology)


def min_cut_upper_bound(
    topology: Topology,
    link: LinkModel,
    alice: int,
    bob: int,
    per_channel: bool = False,
) -> float:
    """Max-flow bound on the mean ebit rate of any routing rule.

    Each edge carries capacity -log2(1 - p(e)); with `per_channel` the
    capacity is S(e) * -log2(1 - p0(e)) from the single-channel
    success probability instead. The bound is the minimum cut
    separating the endpoints.
    """
    check_endpoints(topology, alice, bob)
    probs = link.edge_probs(topology)
    if per_channel:
        p0 = _per_channel_probs(topology, link)
        if np.any(p0 >= 1.0):
            raise ValueError("a certain channel has unbounded capacity")
        caps = np.asarray(topology.channels, dtype=np.float64) * (
            -np.log2(1.0 - p0))
    else:
        if np.any(probs >= 1.0):
            raise ValueError("an always-up edge has unbounded capacity")
        caps = -np.log2(1.0 - probs)
    g = nx.DiGraph()
    g.add_nodes_from(range(topology.num_nodes))
    for (u, v), c in zip(topology.edges, caps):
        g.add_edge(u, v, capacity=float(c))
        g.add_edge(v, u, capacity=float(c))
    return float(nx.maximum_flow_value(g, alice, bob, capacity="capacity"))


def boosted_link_prob(p: float, q: float) -> float:
    """Effective link probability after one local repair move.

    A failed nearest-neighbour link can be replaced by a three-link
    detour whose two interior swaps each succeed with q: the detour
    must be up (p**3), the direct link down and the five remaining
    edges of the two unit cells unused by it down as well ((1-p)**5
    keeps the events disjoint), and both swaps must succeed (q**2).
    """
    if not 0.0 <= p <= 1.0 or not 0.0 <= q <= 1.0:
        raise ValueError("p and q must lie in [0, 1]")
    return p + p**3 * (1.0 - p) ** 5 * q**2


def lower_bound_exponent(p: float, q: float) -> float:
    """Decay exponent beta with rate >= (p*q)**(beta*n) / q.

    beta = log(sqrt(p_boost * p) * q) / log(p * q), evaluated in
    extended precision; beta < 1 whenever the repair move helps.
    """
    if not 0.0 < p <= 1.0 or not 0.0 < q <= 1.0:
        raise ValueError("p and q must lie in (0, 1]")
    if p * q >= 1.0:
        raise ValueError("p*q must be < 1 for a decay exponent")
    with mpmath.workdps(50):
        pb = mpmath.mpf(p) + mpmath.mpf(p) ** 3 * (1 - mpmath.mpf(p)) ** 5 * mpmath.mpf(q) ** 2
        beta = mpmath.log(mpmath.sqrt(pb * p) * q) / mpmath.log(
            mpmath.mpf(p) * q)
        return float(beta)


def local_rate_lower_bound(p: float, q: float, separation: int) -> float:
    """Analytic lower bound on the local-rule rate at lattice distance n.

    (p*q)**(beta*n) / q with beta from `lower_bound_exponent`: the
    rate achieved by a chain of boosted links along a shortest path.
    """
    if separation < 1:
        raise ValueError("separation must be >= 1")
    beta = lower_bound_exponent(p, q)
    return (p * q) ** (beta * separation) / q


@dataclass(frozen=True)
class ScalingFit:
    """Weighted fit of rate ~ prefactor * decay_base**n."""

    decay_base: float
    decay_base_err: float
    prefactor: float
    prefactor_err: float
    chi2_reduced: float
    used_ns: tuple[int, ...]
    dropped_ns: tuple[int, ...]

    def rate_at(self, n: float) -> float:
        return self.prefactor * self.decay_base**n


def fit_scaling(
    ns: Sequence[int],
    estimates: Sequence[RateEstimate],
    min_points: int = 4,
) -> ScalingFit:
    """Fit log(rate) = log(g) + n log(f) by weighted least squares.

    Log-scale errors come from the delta method (stderr / mean).
    Points are dropped from the small-n end, one at a time, while the
    reduced chi-square exceeds 2 and dropping improves it by at least
    30 percent -- small separations bend away from the asymptotic
    exponential. At least `min_points` points are always retained.
    Zero-stderr estimates are accepted only when every stderr is zero
    (exact inputs); the fit is then unweighted and never trimmed.
    """
    ns_arr = np.asarray(ns, dtype=np.float64)
    if ns_arr.ndim != 1 or len(ns_arr) != len(estimates):
        raise ValueError("ns and estimates must be 1-d and equally long")
    if len(ns_arr) < max(min_points, 2):
        raise ValueError(f"need at least {max(min_points, 2)} points")
    means = np.array([e.mean for e in estimates], dtype=np.float64)
    stds = np.array([e.stderr for e in estimates], dtype=np.float64)
    if np.any(means <= 0.0):
        raise ValueError("all means must be positive to fit on log scale")
    order = np.argsort(ns_arr)
    ns_arr, means, stds = ns_arr[order], means[order], stds[order]
    y = np.log(means)
    weighted = bool(np.any(stds > 0.0))
    if weighted and np.any(stds <= 0.0):
        raise ValueError("mixing zero and positive stderrs is not supported")
    sigma = stds / means if weighted else np.ones_like(y)

    def fit_from(i0: int):
        x, yy, sg = ns_arr[i0:], y[i0:], sigma[i0:]
        if weighted:
            coef, cov = np.polyfit(x, yy, 1, w=1.0 / sg, cov="unscaled")
        else:
            coef = np.polyfit(x, yy, 1)
            cov = np.zeros((2, 2))
        resid = (yy - np.polyval(coef, x)) / sg
        dof = len(x) - 2
        chi2_red = float(resid @ resid / dof) if dof > 0 else 0.0
        return coef, cov, chi2_red

    start = 0
    if weighted:
        while len(ns_arr) - start > min_points:
            _, _, chi_now = fit_from(start)
            _, _, chi_next = fit_from(start + 1)
            if chi_now > 2.0 and chi_next < 0.7 * chi_now:
                start += 1
            else:
                break
    coef, cov, chi2_red = fit_from(start)
    slope, intercept = float(coef[0]), float(coef[1])
    f = float(np.exp(slope))
    g = float(np.exp(intercept))
    return ScalingFit(
        decay_base=f,
        decay_base_err=f * float(np.sqrt(cov[0, 0])),
        prefactor=g,
        prefactor_err=g * float(np.sqrt(cov[1, 1])),
        chi2_reduced=chi2_red,
        used_ns=tuple(int(n) for n in ns_arr[start:]),
        dropped_ns=tuple(int(n) for n in ns_arr[:start]),
    )


def _local_config_value(
    topology: Topology,
    up: np.ndarray,
    alice: int,
    bob: int,
    d_a: np.ndarray,
    d_b: np.ndarray,
    tol: float,
    q: float,
    decision_cache: dict,
) -> float:
    """Exact expected local-rule score for one link configuration.

    Sums over every edge-simple walk from Alice to Bob: the walk is
    delivered as one chain exactly when each interior node pairs its
    consecutive edges, and node decisions are independent given the
    configuration. Walks may revisit a four-degree node once (both of
    its pairs belong to the same chain); those need the joint
    probability of the two pairs, not a product of marginals, so both
    marginal and joint tables are built from the enumerated outcomes.
    """
    inc_e = topology.incident_edges
    deg = topology.degrees
    nv = topology.num_nodes
    marg: list[dict | None] = [None] * nv
    joint: list[dict | None] = [None] * nv

    def tables(u: int) -> tuple[dict, dict]:
        if marg[u] is None:
            key = (u, tuple(int(up[inc_e[u, s]]) for s in range(int(deg[u]))))
            cached = decision_cache.get(key)
            if cached is None:
                m: dict = {}
                j: dict = {}
                for pairs, prob in enumerate_node_decisions(
                        topology, up, u, d_a, d_b, tol):
                    for pr in pairs:
                        m[pr] = m.get(pr, 0.0) + prob
                    if len(pairs) == 2:
                        j[pairs] = j.get(pairs, 0.0) + prob
                cached = (m, j)
                decision_cache[key] = cached
            marg[u], joint[u] = cached
        return marg[u], joint[u]  # type: ignore[return-value]

    adj_up: list[list[tuple[int, int]]] = [[] for _ in range(nv)]
    for e, (u, v) in enumerate(topology.edges):
        if up[e]:
            adj_up[u].append((e, v))
            adj_up[v].append((e, u))

    total = 0.0

    def walk_prob(pair_seq: list[tuple[int, tuple[int, int]]]) -> float:
        by_node: dict[int, list[tuple[int, int]]] = {}
        for node, pr in pair_seq:
            by_node.setdefault(node, []).append(pr)
        prob = 1.0
        for node, prs in by_node.items():
            m, j = tables(node)
            if len(prs) == 1:
                prob *= m.get(prs[0], 0.0)
            else:
                key = tuple(sorted(prs))
                prob *= j.get(key, 0.0)
            if prob == 0.0:
                return 0.0
        return prob

    def dfs(node: int, e_in: int, used: int, pair_seq, length: int) -> None:
        nonlocal total
        if node == bob:
            pr = walk_prob(pair_seq)
            if pr > 0.0:
                total += q ** (length - 1) * pr
            return
        if node == alice:
            return
        for e_out, nxt in adj_up[node]:
            if used & (1 << e_out):
                continue
            pair = (e_in, e_out) if e_in < e_out else (e_out, e_in)
            pair_seq.append((node, pair))
            dfs(nxt, e_out, used | (1 << e_out), pair_seq, length + 1)
            pair_seq.pop()

    for e0, first in adj_up[alice]:
        dfs(first, e0, 1 << e0, [], 1)
    return total


def exact_rate_oracle(
    topology: Topology,
    link: LinkModel,
    q: float,
    alice: int,
    bob: int,
    rule: str | DistanceMetric = "greedy",
) -> float:
    """Exact mean per-slot rate by enumerating all 2**E configurations.

    `rule` is "greedy" for the global rule or a `DistanceMetric` for
    the local rule. Limited to `ORACLE_MAX_EDGES` edges. The local
    value per configuration comes from a walk sum over enumerated node
    decisions -- a route entirely independent of the sampling kernels.
    """
    ne = topology.num_edges
    if ne > ORACLE_MAX_EDGES:
        raise ValueError(
            f"oracle enumerates 2**E configurations; {ne} edges exceed "
            f"the {ORACLE_MAX_EDGES}-edge limit")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    check_endpoints(topology, alice, bob)
    probs = link.edge_probs(topology)
    if isinstance(rule, DistanceMetric):
        _check_local_topology(topology)
        d_a = rule.distances_from(topology, alice)
        d_b = rule.distances_from(topology, bob)
        tol = rule.tie_tol
    elif rule != "greedy":
        raise ValueError("rule must be 'greedy' or a DistanceMetric")

    decision_cache: dict = {}
    total = 0.0
    up = np.zeros(ne, dtype=np.uint8)
    for bits in itertools.product((0, 1), repeat=ne):
        weight = 1.0
        for e, b in enumerate(bits):
            weight *= probs[e] if b else 1.0 - probs[e]
        if weight == 0.0:
            continue
        up[:] = bits
        if rule == "greedy":
            paths = greedy_route(topology, LinkInstance(up=up), alice, bob)
            value = instance_rate_global(paths.lengths, q)
        else:
            value = _local_config_value(
                topology, up, alice, bob, d_a, d_b, tol, q, decision_cache)
        total += weight * value
    return total
