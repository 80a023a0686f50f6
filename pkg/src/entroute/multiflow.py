"""Serving two Alice-Bob flows on one lattice.

Three sharing strategies. Time-shared single-flow operation dedicates
each slot to one flow, with the other flow's endpoints acting as
ordinary repeaters; only the slot's own flow may score. Multi-flow
time-share keeps all four endpoints passive in every slot; the slot
assignment only selects which metric the repeaters follow, and chains
are credited to whichever flow's endpoint pair they connect, so the
off-slot flow still collects left-over ebits. Spatial division
assigns each repeater statically to a flow by a boundary line through
the lattice.

A chain can credit at most one flow (terminal pairs are disjoint).
Per-node usage statistics and the Pareto frontier of achieved rate
pairs live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .engine import (
    RateEstimate,
    SimParams,
    check_endpoints,
    run_batched,
)
from .routing_local import DistanceMetric, _check_local_topology
from .topology import Topology


@dataclass(frozen=True)
class FlowSpec:
    """One Alice-Bob flow and the metric its repeaters follow."""

    alice: int
    bob: int
    metric: DistanceMetric


@dataclass(frozen=True)
class SingleFlowTimeShare:
    """Whole-network time sharing: slot share for flow 1 in [0, 1]."""

    share: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.share <= 1.0:
            raise ValueError("share must lie in [0, 1]")


@dataclass(frozen=True)
class MultiFlowTimeShare:
    """Metric time sharing with all four endpoints always passive."""

    share: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.share <= 1.0:
            raise ValueError("share must lie in [0, 1]")


@dataclass(frozen=True)
class AxisBoundary:
    """Axis-parallel dividing line; nodes on the line go to flow 1."""

    axis: str  # "x": vertical line x = offset; "y": horizontal line
    offset: int

    def __post_init__(self) -> None:
        if self.axis not in ("x", "y"):
            raise ValueError("axis must be 'x' or 'y'")


@dataclass(frozen=True)
class AngledBoundary:
    """Line through a pivot at theta degrees; on-line nodes to flow 1.

    The pivot defaults to the centroid of the four endpoints, which
    for crossing flows placed on opposite square corners is the
    crossing midpoint.
    """

    theta_deg: float
    pivot: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta_deg <= 90.0:
            raise ValueError("theta_deg must lie in [0, 90]")


@dataclass(frozen=True)
class SpatialDivision:
    """Static node-to-flow assignment by a boundary line."""

    boundary: AxisBoundary | AngledBoundary


Strategy = SingleFlowTimeShare | MultiFlowTimeShare | SpatialDivision


@dataclass(frozen=True)
class TwoFlowRates:
    flow1: RateEstimate
    flow2: RateEstimate


@dataclass(frozen=True)
class RegionPoint:
    """One point of a rate-region sweep."""

    knob: float
    strategy: str
    flow1: RateEstimate
    flow2: RateEstimate


@dataclass(frozen=True)
class StrategyComparison:
    """Two strategies run on shared slots, with paired differences."""

    first: TwoFlowRates
    second: TwoFlowRates
    diff_flow1: RateEstimate  # first minus second, per-slot paired
    diff_flow2: RateEstimate


@dataclass(frozen=True)
class HeatmapResult:
    """Per-node involvement probabilities for a single flow."""

    rate: RateEstimate
    usage: np.ndarray  # (V,) mean per-slot involvement probability


def spatial_regions(
    topology: Topology,
    flow1: FlowSpec,
    flow2: FlowSpec,
    boundary: AxisBoundary | AngledBoundary,
) -> np.ndarray:
    """Per-node flow assignment (1 or 2) induced by the boundary."""
    coords = topology.coords
    region = np.empty(topology.num_nodes, dtype=np.uint8)
    if isinstance(boundary, AxisBoundary):
        idx = 0 if boundary.axis == "x" else 1
        f1_mean = (coords[flow1.alice][idx] + coords[flow1.bob][idx]) / 2.0
        f2_mean = (coords[flow2.alice][idx] + coords[flow2.bob][idx]) / 2.0
        flow1_low = f1_mean <= f2_mean
        for n, c in enumerate(coords):
            low = c[idx] < boundary.offset
            on_line = c[idx] == boundary.offset
            if on_line:
                region[n] = 1
            elif low == flow1_low:
                region[n] = 1
            else:
                region[n] = 2
    else:
        if boundary.pivot is None:
            px = (coords[flow1.alice][0] + coords[flow1.bob][0]
                  + coords[flow2.alice][0] + coords[flow2.bob][0]) / 4.0
            py = (coords[flow1.alice][1] + coords[flow1.bob][1]
                  + coords[flow2.alice][1] + coords[flow2.bob][1]) / 4.0
        else:
            px, py = boundary.pivot
        th = math.radians(boundary.theta_deg)
        ct, st = math.cos(th), math.sin(th)
        for n, (x, y) in enumerate(coords):
            s = ct * (y - py) - st * (x - px)
            region[n] = 1 if s >= -1e-12 else 2
    return region


def _flow_endpoint_ids(flow1: FlowSpec, flow2: FlowSpec) -> tuple[int, int, int, int]:
    ids = (flow1.alice, flow1.bob, flow2.alice, flow2.bob)
    if len(set(ids)) != 4:
        raise ValueError("the two flows need four distinct endpoints")
    return ids


def _strategy_setup(
    topology: Topology,
    flow1: FlowSpec,
    flow2: FlowSpec,
    strategy: Strategy,
):
    """Masks and knobs the kernel needs for one strategy."""
    a1, b1, a2, b2 = _flow_endpoint_ids(flow1, flow2)
    nv = topology.num_nodes
    all_four = np.zeros(nv, dtype=np.uint8)
    for u in (a1, b1, a2, b2):
        all_four[u] = 1
    region = np.zeros(nv, dtype=np.uint8)
    if isinstance(strategy, SingleFlowTimeShare):
        own1 = np.zeros(nv, dtype=np.uint8)
        own1[a1] = own1[b1] = 1
        own2 = np.zeros(nv, dtype=np.uint8)
        own2[a2] = own2[b2] = 1
        return own1, own2, region, strategy.share, 0
    if isinstance(strategy, MultiFlowTimeShare):
        return all_four, all_four, region, strategy.share, 1
    if isinstance(strategy, SpatialDivision):
        region = spatial_regions(topology, flow1, flow2, strategy.boundary)
        return all_four, all_four, region, None, 1
    raise ValueError(f"unknown strategy {strategy!r}")


def _two_flow_evaluator(
    topology: Topology,
    flow1: FlowSpec,
    flow2: FlowSpec,
    strategy: Strategy,
    q: float,
):
    """Batch evaluator returning per-slot (flow 1, flow 2) values.

    Per-trial draw layout after the edge flags: the tie-break coins,
    then one slot-assignment uniform (consumed by every strategy so
    layouts stay aligned). Coins first keeps the coin matrix
    bit-identical to a same-seed single-flow run, so dedicating every
    slot to one flow reproduces its single-flow values exactly.
    """
    _check_local_topology(topology)
    a1, b1, a2, b2 = _flow_endpoint_ids(flow1, flow2)
    check_endpoints(topology, a1, b1)
    check_endpoints(topology, a2, b2)
    passive_f1, passive_f2, region, share, credit_both = _strategy_setup(
        topology, flow1, flow2, strategy)
    da1 = flow1.metric.distances_from(topology, a1)
    db1 = flow1.metric.distances_from(topology, b1)
    da2 = flow2.metric.distances_from(topology, a2)
    db2 = flow2.metric.distances_from(topology, b2)
    tol1 = flow1.metric.tie_tol
    tol2 = flow2.metric.tie_tol
    inc_e = topology.incident_edges
    inc_n = topology.neighbour_nodes
    deg = topology.degrees
    edge_nodes = topology.edge_nodes
    nv = topology.num_nodes

    def batch_eval(up_mat, rngs, start):
        n = len(rngs)
        slot_flow = np.empty(n, dtype=np.uint8)
        coins = np.empty((n, nv, _kernels.COINS_PER_NODE))
        for i, rng in enumerate(rngs):
            coins[i] = rng.random((nv, _kernels.COINS_PER_NODE))
            u_slot = rng.random()
            if share is None:
                slot_flow[i] = 0
            else:
                slot_flow[i] = 1 if u_slot < share else 2
        return _kernels.two_flow_batch(
            up_mat, coins, slot_flow, region, passive_f1, passive_f2,
            inc_e, inc_n, deg, edge_nodes,
            da1, db1, tol1, da2, db2, tol2,
            a1, b1, a2, b2, q, credit_both)

    return batch_eval


def simulate_two_flows(
    topology: Topology,
    params: SimParams,
    flow1: FlowSpec,
    flow2: FlowSpec,
    strategy: Strategy,
    workers: int = 1,
) -> TwoFlowRates:
    """Rates delivered to both flows under a sharing strategy."""
    ev = _two_flow_evaluator(topology, flow1, flow2, strategy, params.q)
    r1, r2 = run_batched(topology, params, ev, workers=workers, components=2)
    return TwoFlowRates(flow1=r1, flow2=r2)


def compare_strategies(
    topology: Topology,
    params: SimParams,
    flow1: FlowSpec,
    flow2: FlowSpec,
    first: Strategy,
    second: Strategy,
    workers: int = 1,
) -> StrategyComparison:
    """Run two strategies on identical slots and pair the differences.

    Both strategies see the same external samples and coins, so the
    difference estimates carry the (much smaller) paired variance.
    """
    ev_a = _two_flow_evaluator(topology, flow1, flow2, first, params.q)
    ev_b = _two_flow_evaluator(topology, flow1, flow2, second, params.q)

    def batch_eval(up_mat, rngs, start):
        # Both evaluators must consume identical per-trial draws, so
        # clone the generators for the second pass.
        states = [rng.bit_generator.state for rng in rngs]
        va = ev_a(up_mat, rngs, start)
        clones = []
        for st in states:
            bg = np.random.PCG64()
            bg.state = st
            clones.append(np.random.Generator(bg))
        vb = ev_b(up_mat, clones, start)
        return np.concatenate([va, vb, va - vb], axis=1)

    r = run_batched(topology, params, batch_eval, workers=workers, components=6)
    return StrategyComparison(
        first=TwoFlowRates(flow1=r[0], flow2=r[1]),
        second=TwoFlowRates(flow1=r[2], flow2=r[3]),
        diff_flow1=r[4], diff_flow2=r[5])


def rate_region(
    topology: Topology,
    params: SimParams,
    flow1: FlowSpec,
    flow2: FlowSpec,
    sweep: Sequence[tuple[float, Strategy]],
    workers: int = 1,
) -> list[RegionPoint]:
    """Simulate a family of strategies; one region point per knob.

    Every point reuses the same seed, so points share external
    randomness (common-random-number sweeps give smooth regions).
    """
    points = []
    for knob, strategy in sweep:
        rates = simulate_two_flows(
            topology, params, flow1, flow2, strategy, workers=workers)
        points.append(RegionPoint(
            knob=float(knob), strategy=type(strategy).__name__,
            flow1=rates.flow1, flow2=rates.flow2))
    return points


def timeshare_sweep(shares: Iterable[float], multi: bool) -> list[tuple[float, Strategy]]:
    """Knobbed time-share strategy family over flow-1 slot shares."""
    cls = MultiFlowTimeShare if multi else SingleFlowTimeShare
    return [(float(s), cls(share=float(s))) for s in shares]


def axis_boundary_sweep(axis: str, offsets: Iterable[int]) -> list[tuple[float, Strategy]]:
    return [
        (float(o), SpatialDivision(boundary=AxisBoundary(axis=axis, offset=int(o))))
        for o in offsets
    ]


def angled_boundary_sweep(
    thetas_deg: Iterable[float], pivot: tuple[float, float] | None = None
) -> list[tuple[float, Strategy]]:
    return [
        (float(t), SpatialDivision(boundary=AngledBoundary(theta_deg=float(t), pivot=pivot)))
        for t in thetas_deg
    ]


def pareto_frontier(points: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    """Upper-right frontier of the time-share closure of the points.

    Time sharing between any two achieved points reaches the segment
    between them, so the achievable frontier is the north-east part of
    the convex hull: from the highest-R2 vertex to the highest-R1
    vertex. Returned sorted by R1 ascending.
    """
    pts = sorted(set((float(x), float(y)) for x, y in points))
    if not pts:
        return []
    if len(pts) == 1:
        return pts
    # upper convex hull, x ascending
    hull: list[tuple[float, float]] = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    # keep from the max-y vertex rightward: everything before it is
    # dominated (smaller x and smaller y)
    top = max(range(len(hull)), key=lambda i: (hull[i][1], hull[i][0]))
    return hull[top:]


def usage_heatmap(
    topology: Topology,
    params: SimParams,
    alice: int,
    bob: int,
    metric: DistanceMetric,
    workers: int = 1,
) -> HeatmapResult:
    """Per-node probability of lying on a delivered end-to-end ebit.

    A node on several Alice-Bob chains in one slot counts once with
    probability 1 - prod(1 - q^swaps); endpoints count their terminal
    participation the same way.
    """
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
    usage_parts: dict[int, np.ndarray] = {}

    def batch_eval(up_mat, rngs, start):
        coins = np.empty((len(rngs), nv, _kernels.COINS_PER_NODE))
        for i, rng in enumerate(rngs):
            coins[i] = rng.random((nv, _kernels.COINS_PER_NODE))
        usage = np.zeros(nv)
        scores = _kernels.local_usage_batch(
            up_mat, coins, inc_e, inc_n, deg, edge_nodes,
            d_a, d_b, tol, passive, alice, bob, q, usage)
        usage_parts[start] = usage
        return scores

    rate = run_batched(topology, params, batch_eval, workers=workers)[0]
    # Reduction consumes batches in strict index order, so the reduced
    # set is exactly the batches starting below rate.trials; prefetched
    # batches past an early stop are dropped here too.
    total = np.zeros(nv)
    for start in sorted(usage_parts):
        if start < rate.trials:
            total += usage_parts[start]
    return HeatmapResult(rate=rate, usage=total / rate.trials)
