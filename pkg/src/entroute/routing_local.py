"""Local-knowledge routing: the nearest-neighbour pairing rule.

Every repeater sees only the state of its own external links. Given a
distance metric toward each endpoint, a node picks v, the up-neighbour
closest to Alice, and w, the up-neighbour closest to Bob, and swaps
the corresponding memories. If v and w coincide, the rule tries
replacing either one with its runner-up and keeps the substitution
with the smaller summed distance. When all four links are up the two
leftover memories are swapped too. Exact metric ties are broken
uniformly at random to preserve lattice symmetry.

Swap decisions across nodes are independent given the external state,
so the delivered chains are scored in expectation (q^swaps each)
instead of sampling swap outcomes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from .engine import (
    LinkInstance,
    RateEstimate,
    SimParams,
    check_endpoints,
    derive_seed,
    run_batched,
)
from .topology import Topology

# Rates below this floor clamp to it when inverted into table distances.
RATE_FLOOR = 1e-6

# Metric values are compared exactly for integer-valued metrics and
# with this tolerance otherwise.
TIE_TOL = 1e-9


@dataclass(frozen=True)
class DistanceMetric:
    """Distance-to-endpoint rule guiding the local pairing decisions.

    kind "l1" and "l2" compute lattice distances from coordinates;
    kind "table" carries an explicit per-node distance table for each
    endpoint it serves (built, for example, from inverted rates).
    """

    kind: str
    tables: Mapping[int, tuple[float, ...]] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("l1", "l2", "table"):
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.kind == "table" and not self.tables:
            raise ValueError("table metric needs at least one endpoint table")

    @staticmethod
    def l1() -> "DistanceMetric":
        return DistanceMetric(kind="l1")

    @staticmethod
    def l2() -> "DistanceMetric":
        return DistanceMetric(kind="l2")

    @staticmethod
    def from_tables(tables: Mapping[int, Sequence[float]]) -> "DistanceMetric":
        return DistanceMetric(
            kind="table",
            tables={int(k): tuple(float(x) for x in v) for k, v in tables.items()},
        )

    @property
    def tie_tol(self) -> float:
        return 0.0 if self.kind == "l1" else TIE_TOL

    def distances_from(self, topology: Topology, endpoint: int) -> np.ndarray:
        """Per-node distance to `endpoint` as a float64 array."""
        if self.kind == "table":
            assert self.tables is not None
            if endpoint not in self.tables:
                raise ValueError(f"metric has no table for endpoint {endpoint}")
            arr = np.asarray(self.tables[endpoint], dtype=np.float64)
            if arr.shape != (topology.num_nodes,):
                raise ValueError(
                    f"table for endpoint {endpoint} has {arr.shape[0]} entries, "
                    f"topology has {topology.num_nodes} nodes")
            return arr
        ex, ey = topology.coords[endpoint]
        xs = np.array([c[0] for c in topology.coords], dtype=np.float64)
        ys = np.array([c[1] for c in topology.coords], dtype=np.float64)
        if self.kind == "l1":
            return np.abs(xs - ex) + np.abs(ys - ey)
        return np.hypot(xs - ex, ys - ey)

    def merge(self, other: "DistanceMetric") -> "DistanceMetric":
        """Combine endpoint tables from two table metrics."""
        if self.kind != "table" or other.kind != "table":
            raise ValueError("only table metrics can be merged")
        assert self.tables is not None and other.tables is not None
        merged = dict(self.tables)
        merged.update(other.tables)
        return DistanceMetric(kind="table", tables=merged)

    def table_to_json(self, endpoint: int) -> str:
        if self.kind != "table" or self.tables is None or endpoint not in self.tables:
            raise ValueError(f"no table for endpoint {endpoint}")
        entries = [
            {"node": i, "d": d} for i, d in enumerate(self.tables[endpoint])
        ]
        return json.dumps({"endpoint": endpoint, "entries": entries}, indent=2)

    @staticmethod
    def table_from_json(text: str) -> "DistanceMetric":
        doc = json.loads(text)
        endpoint = int(doc["endpoint"])
        entries = sorted(doc["entries"], key=lambda r: r["node"])
        if [r["node"] for r in entries] != list(range(len(entries))):
            raise ValueError("table entries must cover nodes 0..V-1")
        return DistanceMetric.from_tables(
            {endpoint: [float(r["d"]) for r in entries]})


def parse_metric(spec: object) -> DistanceMetric:
    """Metric from a config value: "L1", "L2", or a table document."""
    if isinstance(spec, DistanceMetric):
        return spec
    if isinstance(spec, str):
        name = spec.strip().lower()
        if name == "l1":
            return DistanceMetric.l1()
        if name == "l2":
            return DistanceMetric.l2()
        raise ValueError(f"unknown metric name {spec!r}")
    if isinstance(spec, Mapping) and "tables" in spec:
        return DistanceMetric.from_tables(spec["tables"])
    raise ValueError(f"cannot interpret metric spec {spec!r}")


def _check_local_topology(topology: Topology) -> None:
    if topology.max_degree > 4:
        raise ValueError(
            "the local pairing rule is defined for degree <= 4 lattices; "
            f"topology has max degree {topology.max_degree}")


@dataclass(frozen=True)
class Chain:
    """A maximal alternating external-link/swap chain for one slot."""

    edges: tuple[int, ...]
    nodes: tuple[int, ...]  # terminal, interior..., terminal
    swaps: int

    @property
    def terminals(self) -> tuple[int, int]:
        return (self.nodes[0], self.nodes[-1])


def local_rule_decide(
    topology: Topology,
    up: np.ndarray,
    node: int,
    d_a: np.ndarray,
    d_b: np.ndarray,
    tol: float,
    coins: Sequence[float],
) -> tuple[tuple[int, int], ...]:
    """Reference pairing decision at one node; returns edge-id pairs.

    coins supplies the five tie-break uniforms defined by the kernel
    layout; passing the same values as the batched kernel must yield
    the same decision (tests enforce this bitwise).
    """
    inc_e = topology.incident_edges
    inc_n = topology.neighbour_nodes
    deg = int(topology.degrees[node])
    up_slots = [s for s in range(deg) if up[inc_e[node, s]]]
    if len(up_slots) < 2:
        return ()

    def nbr(slot: int) -> int:
        return int(inc_n[node, slot])

    def pick_min(slots: Iterable[int], d: np.ndarray, coin: float) -> int:
        slots = list(slots)
        dmin = min(d[nbr(s)] for s in slots)
        ties = [s for s in slots if d[nbr(s)] <= dmin + tol]
        idx = min(int(coin * len(ties)), len(ties) - 1)
        return ties[idx]

    v_slot = pick_min(up_slots, d_a, coins[0])
    w_slot = pick_min(up_slots, d_b, coins[1])
    if v_slot == w_slot:
        rest = [s for s in up_slots if s != v_slot]
        v_alt = pick_min(rest, d_a, coins[2])
        w_alt = pick_min(rest, d_b, coins[3])
        sum_a = d_a[nbr(v_alt)] + d_b[nbr(w_slot)]
        sum_b = d_a[nbr(v_slot)] + d_b[nbr(w_alt)]
        if sum_a < sum_b - tol:
            v_slot = v_alt
        elif sum_b < sum_a - tol:
            w_slot = w_alt
        elif coins[4] < 0.5:
            v_slot = v_alt
        else:
            w_slot = w_alt
    pairs = [(int(inc_e[node, v_slot]), int(inc_e[node, w_slot]))]
    if len(up_slots) == 4:
        extra = [s for s in up_slots if s not in (v_slot, w_slot)]
        pairs.append((int(inc_e[node, extra[0]]), int(inc_e[node, extra[1]])))
    return tuple(pairs)


def enumerate_node_decisions(
    topology: Topology,
    up: np.ndarray,
    node: int,
    d_a: np.ndarray,
    d_b: np.ndarray,
    tol: float,
) -> list[tuple[tuple[tuple[int, int], ...], float]]:
    """All pairing outcomes at a node with their exact probabilities.

    Enumerates every tie-break branch the coin-driven rule can take,
    weighting each uniformly; used by the exact oracle instead of
    sampling coins.
    """
    inc_e = topology.incident_edges
    inc_n = topology.neighbour_nodes
    deg = int(topology.degrees[node])
    up_slots = [s for s in range(deg) if up[inc_e[node, s]]]
    if len(up_slots) < 2:
        return [((), 1.0)]

    def nbr(slot: int) -> int:
        return int(inc_n[node, slot])

    def tie_set(slots: list[int], d: np.ndarray) -> list[int]:
        dmin = min(d[nbr(s)] for s in slots)
        return [s for s in slots if d[nbr(s)] <= dmin + tol]

    def finish(v_slot: int, w_slot: int) -> tuple[tuple[int, int], ...]:
        pairs = [(int(inc_e[node, v_slot]), int(inc_e[node, w_slot]))]
        if len(up_slots) == 4:
            extra = [s for s in up_slots if s not in (v_slot, w_slot)]
            pairs.append((int(inc_e[node, extra[0]]), int(inc_e[node, extra[1]])))
        return tuple(pairs)

    out: dict[tuple[tuple[int, int], ...], float] = {}

    def add(pairs: tuple[tuple[int, int], ...], prob: float) -> None:
        key = tuple(sorted(tuple(sorted(p)) for p in pairs))
        out[key] = out.get(key, 0.0) + prob

    ties_a = tie_set(up_slots, d_a)
    ties_b = tie_set(up_slots, d_b)
    for v_slot in ties_a:
        for w_slot in ties_b:
            p_vw = (1.0 / len(ties_a)) * (1.0 / len(ties_b))
            if v_slot != w_slot:
                add(finish(v_slot, w_slot), p_vw)
                continue
            rest = [s for s in up_slots if s != v_slot]
            ties_a2 = tie_set(rest, d_a)
            ties_b2 = tie_set(rest, d_b)
            for v_alt in ties_a2:
                for w_alt in ties_b2:
                    p_alt = p_vw / (len(ties_a2) * len(ties_b2))
                    sum_a = d_a[nbr(v_alt)] + d_b[nbr(w_slot)]
                    sum_b = d_a[nbr(v_slot)] + d_b[nbr(w_alt)]
                    if sum_a < sum_b - tol:
                        add(finish(v_alt, w_slot), p_alt)
                    elif sum_b < sum_a - tol:
                        add(finish(v_slot, w_alt), p_alt)
                    else:
                        add(finish(v_alt, w_slot), p_alt / 2.0)
                        add(finish(v_slot, w_alt), p_alt / 2.0)
    return list(out.items())


def extract_chains(
    topology: Topology,
    instance: LinkInstance,
    decisions: Mapping[int, tuple[tuple[int, int], ...]],
) -> list[Chain]:
    """Maximal chains implied by the swap decisions; cycles dropped.

    Rejects decisions that pair a memory twice, pair a down edge, or
    pair edges not incident to the deciding node.
    """
    up = instance.up
    edge_nodes = topology.edge_nodes
    pair_at: dict[tuple[int, int], int] = {}
    for node, pairs in decisions.items():
        for e1, e2 in pairs:
            for ea, eb in ((e1, e2), (e2, e1)):
                if not up[ea]:
                    raise ValueError(f"node {node} paired down edge {ea}")
                if node not in (int(edge_nodes[ea, 0]), int(edge_nodes[ea, 1])):
                    raise ValueError(f"node {node} paired non-incident edge {ea}")
                key = (ea, node)
                if key in pair_at:
                    raise ValueError(
                        f"memory of edge {ea} at node {node} paired twice")
                pair_at[key] = eb

    chains: list[Chain] = []
    visited: set[int] = set()
    for e in range(topology.num_edges):
        if not up[e] or e in visited:
            continue
        for side in range(2):
            t1 = int(edge_nodes[e, side])
            if (e, t1) in pair_at:
                continue
            # free memory end: walk the chain to its other terminal
            nodes = [t1]
            edges = []
            cur, enter = e, t1
            while True:
                visited.add(cur)
                edges.append(cur)
                u, v = int(edge_nodes[cur, 0]), int(edge_nodes[cur, 1])
                exit_node = v if enter == u else u
                nodes.append(exit_node)
                nxt = pair_at.get((cur, exit_node))
                if nxt is None:
                    break
                cur, enter = nxt, exit_node
            chains.append(
                Chain(edges=tuple(edges), nodes=tuple(nodes), swaps=len(edges) - 1))
            break
    return chains


def instance_rate_local(chains: Iterable[Chain], alice: int, bob: int, q: float) -> float:
    """Expected delivered ebits: sum of q^swaps over Alice-Bob chains."""
    total = 0.0
    for c in chains:
        if set(c.terminals) == {alice, bob}:
            total += q ** c.swaps
    return total


def local_slot_value(
    topology: Topology,
    instance: LinkInstance,
    alice: int,
    bob: int,
    d_a: np.ndarray,
    d_b: np.ndarray,
    tol: float,
    q: float,
    rng: np.random.Generator,
) -> float:
    """Reference per-slot value; draws coins like the batched kernel."""
    coins = rng.random((topology.num_nodes, _kernels.COINS_PER_NODE))
    decisions = {}
    for u in range(topology.num_nodes):
        if u in (alice, bob):
            continue
        pairs = local_rule_decide(topology, instance.up, u, d_a, d_b, tol, coins[u])
        if pairs:
            decisions[u] = pairs
    chains = extract_chains(topology, instance, decisions)
    return instance_rate_local(chains, alice, bob, q)


def estimate_local_rate(
    topology: Topology,
    params: SimParams,
    alice: int,
    bob: int,
    metric: DistanceMetric,
    workers: int = 1,
) -> RateEstimate:
    """Mean ebits per slot delivered by the local pairing rule."""
    _check_local_topology(topology)
    check_endpoints(topology, alice, bob)
    d_a = metric.distances_from(topology, alice)
    d_b = metric.distances_from(topology, bob)
    tol = metric.tie_tol
    inc_e = topology.incident_edges
    inc_n = topology.neighbour_nodes
    deg = topology.degrees
    edge_nodes = topology.edge_nodes
    nv = topology.num_nodes
    passive = np.zeros(nv, dtype=np.uint8)
    passive[alice] = 1
    passive[bob] = 1
    q = params.q

    def batch_eval(up_mat, rngs, start):
        coins = np.empty((len(rngs), nv, _kernels.COINS_PER_NODE))
        for i, rng in enumerate(rngs):
            coins[i] = rng.random((nv, _kernels.COINS_PER_NODE))
        return _kernels.local_batch(
            up_mat, coins, inc_e, inc_n, deg, edge_nodes,
            d_a, d_b, tol, passive, alice, bob, q)

    return run_batched(topology, params, batch_eval, workers=workers)[0]


def build_recursive_metric(
    topology: Topology,
    params: SimParams,
    base_metric: DistanceMetric,
    endpoint: int,
    floor: float = RATE_FLOOR,
    workers: int = 1,
) -> DistanceMetric:
    """Table metric from inverted local-rule rates toward an endpoint.

    For every node n the local rate between n and the endpoint is
    estimated under the base metric and inverted: d(n) = 1/max(rate,
    floor), with d(endpoint) = 0. Each node's run draws its own seed
    from (params.seed, n) so table entries are independent.
    """
    _check_local_topology(topology)
    if not 0 <= endpoint < topology.num_nodes:
        raise ValueError(f"endpoint {endpoint} outside node range")
    if floor <= 0.0:
        raise ValueError("rate floor must be positive")
    table = np.empty(topology.num_nodes)
    for n in range(topology.num_nodes):
        if n == endpoint:
            table[n] = 0.0
            continue
        node_params = SimParams(
            link=params.link, q=params.q, trials=params.trials,
            seed=derive_seed(params.seed, n), stop_rel_err=params.stop_rel_err)
        rate = estimate_local_rate(
            topology, node_params, n, endpoint, base_metric, workers=workers)
        table[n] = 1.0 / max(rate.mean, floor)
    return DistanceMetric.from_tables({endpoint: table})


def _canonical_displacement(dx: int, dy: int) -> tuple[int, int]:
    ax, ay = abs(dx), abs(dy)
    return (ax, ay) if ax >= ay else (ay, ax)


MetricFactory = Callable[[Topology, int, int], DistanceMetric]


def displacement_rate_table(
    params: SimParams,
    metric_factory: MetricFactory,
    max_sep: int,
    margin: int = 8,
    workers: int = 1,
) -> dict[tuple[int, int], RateEstimate]:
    """Local-rule rate as a function of endpoint displacement.

    For each displacement (dx, dy) with dx >= dy >= 0 and
    1 <= dx+dy <= max_sep, the rate is measured on a fresh grid with
    `margin` rows of slack on every side. Grid translation invariance
    then lets one table serve every endpoint, which is what makes the
    iterated-metric construction affordable.
    """
    from .topology import build_grid

    if max_sep < 1:
        raise ValueError("max_sep must be >= 1")
    rates: dict[tuple[int, int], RateEstimate] = {}
    for dx in range(0, max_sep + 1):
        for dy in range(0, dx + 1):
            if dx + dy < 1 or dx + dy > max_sep:
                continue
            top = build_grid(dx + 2 * margin + 1, dy + 2 * margin + 1)
            a = top.node_at(margin, margin)
            b = top.node_at(margin + dx, margin + dy)
            cell_params = SimParams(
                link=params.link, q=params.q, trials=params.trials,
                seed=derive_seed(params.seed, dx, dy),
                stop_rel_err=params.stop_rel_err)
            metric = metric_factory(top, a, b)
            rates[(dx, dy)] = estimate_local_rate(
                top, cell_params, a, b, metric, workers=workers)
    return rates


def displacement_metric(
    topology: Topology,
    endpoints: Iterable[int],
    rates: Mapping[tuple[int, int], RateEstimate],
    floor: float = RATE_FLOOR,
) -> DistanceMetric:
    """Table metric for the given endpoints from a displacement table.

    Distances are inverted rates looked up by absolute displacement
    (symmetry of the lattice and of the underlying metrics makes the
    rate a function of (|dx|, |dy|) up to axis swap). Displacements
    beyond the table clamp to the floor distance.
    """
    tables = {}
    for endpoint in endpoints:
        ex, ey = topology.coords[endpoint]
        table = np.empty(topology.num_nodes)
        for n, (x, y) in enumerate(topology.coords):
            if n == endpoint:
                table[n] = 0.0
                continue
            key = _canonical_displacement(x - ex, y - ey)
            est = rates.get(key)
            rate = est.mean if est is not None else 0.0
            table[n] = 1.0 / max(rate, floor)
        tables[endpoint] = table
    return DistanceMetric.from_tables(tables)
