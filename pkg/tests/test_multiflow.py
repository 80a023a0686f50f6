import math

import numpy as np
import pytest

from entroute.engine import SimParams
from entroute.multiflow import (
    AngledBoundary,
    AxisBoundary,
    FlowSpec,
    MultiFlowTimeShare,
    SingleFlowTimeShare,
    SpatialDivision,
    compare_strategies,
    pareto_frontier,
    rate_region,
    simulate_two_flows,
    spatial_regions,
    timeshare_sweep,
    usage_heatmap,
)
from entroute.routing_local import DistanceMetric, estimate_local_rate
from entroute.topology import LinkModel, build_grid


L2 = DistanceMetric.l2()


def _parallel_setup(side=6, margin=0):
    """Two flows on the bottom/top sides of a square box, optionally
    embedded in a larger grid with `margin` spare rows on each side."""
    g = build_grid(side + 2 * margin + 1, side + 2 * margin + 1)
    m = margin
    f1 = FlowSpec(g.node_at(m, m), g.node_at(m + side, m), L2)
    f2 = FlowSpec(g.node_at(m, m + side), g.node_at(m + side, m + side), L2)
    return g, f1, f2


def _crossing_setup(side=6, margin=0):
    g = build_grid(side + 2 * margin + 1, side + 2 * margin + 1)
    m = margin
    f1 = FlowSpec(g.node_at(m, m), g.node_at(m + side, m + side), L2)
    f2 = FlowSpec(g.node_at(m, m + side), g.node_at(m + side, m), L2)
    return g, f1, f2


def _params(trials=2000, seed=11):
    return SimParams(link=LinkModel.direct(0.9), q=0.9, trials=trials, seed=seed)


def test_dedicated_slots_reproduce_single_flow():
    """All slots to flow 1: flow 1 sees exactly the single-flow run and
    flow 2 scores nothing."""
    g, f1, f2 = _parallel_setup()
    params = _params()
    rates = simulate_two_flows(g, params, f1, f2, SingleFlowTimeShare(1.0))
    solo = estimate_local_rate(g, params, f1.alice, f1.bob, f1.metric)
    assert rates.flow1 == solo
    assert rates.flow2.mean == 0.0
    assert rates.flow2.stderr == 0.0
    flipped = simulate_two_flows(g, params, f1, f2, SingleFlowTimeShare(0.0))
    assert flipped.flow1.mean == 0.0


def test_single_timeshare_monotone_in_share():
    """Finite-sample slot sets are nested in the share knob, so the
    same-seed sweep is monotone flow by flow."""
    g, f1, f2 = _parallel_setup()
    params = _params()
    shares = [0.0, 0.25, 0.5, 0.75, 1.0]
    points = rate_region(g, params, f1, f2, timeshare_sweep(shares, multi=False))
    r1 = [p.flow1.mean for p in points]
    r2 = [p.flow2.mean for p in points]
    assert all(b >= a for a, b in zip(r1, r1[1:]))
    assert all(b <= a for a, b in zip(r2, r2[1:]))


def test_multi_timeshare_leftover_rate():
    """Keeping all four endpoints passive lets the off-slot flow keep
    scoring: at share 1 flow 2 still collects a positive rate."""
    # strongest form: flow 2's endpoints sit on flow 1's own line, so
    # chains routed for flow 1 terminate between them constantly
    g = build_grid(9, 9)
    f1 = FlowSpec(g.node_at(1, 4), g.node_at(7, 4), L2)
    f2 = FlowSpec(g.node_at(3, 4), g.node_at(5, 4), L2)
    rates = simulate_two_flows(
        g, _params(trials=2000), f1, f2, MultiFlowTimeShare(1.0))
    assert rates.flow2.mean > 10 * rates.flow2.stderr
    # box geometry: needs room around the box for stray chains to reach
    # both far endpoints, hence the embedding margin
    g, f1, f2 = _parallel_setup(margin=3)
    rates = simulate_two_flows(
        g, _params(trials=8000), f1, f2, MultiFlowTimeShare(1.0))
    assert rates.flow2.mean > 3 * rates.flow2.stderr


def test_symmetric_layout_balances_flows():
    g, f1, f2 = _parallel_setup()
    rates = simulate_two_flows(
        g, _params(trials=4000), f1, f2, MultiFlowTimeShare(0.5))
    gap = abs(rates.flow1.mean - rates.flow2.mean)
    se = math.hypot(rates.flow1.stderr, rates.flow2.stderr)
    assert gap < 4 * se


def test_axis_regions():
    g, f1, f2 = _parallel_setup()
    region = spatial_regions(g, f1, f2, AxisBoundary(axis="y", offset=3))
    for n, (x, y) in enumerate(g.coords):
        assert region[n] == (1 if y <= 3 else 2)
    # flow 1 lives on the high side once the flows swap roles
    region = spatial_regions(g, f2, f1, AxisBoundary(axis="y", offset=3))
    for n, (x, y) in enumerate(g.coords):
        assert region[n] == (1 if y >= 3 else 2)


def test_angled_regions_about_centroid():
    g, f1, f2 = _crossing_setup()
    region0 = spatial_regions(g, f1, f2, AngledBoundary(theta_deg=0.0))
    region90 = spatial_regions(g, f1, f2, AngledBoundary(theta_deg=90.0))
    for n, (x, y) in enumerate(g.coords):
        assert region0[n] == (1 if y >= 3 else 2)
        assert region90[n] == (1 if x <= 3 else 2)


def test_spatial_starved_flow_scores_zero():
    g, f1, f2 = _parallel_setup()
    division = SpatialDivision(AxisBoundary(axis="y", offset=6))
    rates = simulate_two_flows(g, _params(), f1, f2, division)
    assert rates.flow2.mean == 0.0
    assert rates.flow1.mean > 0.0


def test_compare_strategies_pairing():
    g, f1, f2 = _parallel_setup(margin=3)
    params = _params(trials=4000)
    cmp = compare_strategies(
        g, params, f1, f2, MultiFlowTimeShare(0.5), SingleFlowTimeShare(0.5))
    # difference estimates agree with the component means
    assert cmp.diff_flow1.mean == pytest.approx(
        cmp.first.flow1.mean - cmp.second.flow1.mean, rel=1e-9, abs=1e-12)
    assert cmp.diff_flow2.mean == pytest.approx(
        cmp.first.flow2.mean - cmp.second.flow2.mean, rel=1e-9, abs=1e-12)
    # first leg equals a standalone run of the same strategy
    solo = simulate_two_flows(g, params, f1, f2, MultiFlowTimeShare(0.5))
    assert cmp.first.flow1 == solo.flow1
    # sharing slots shrinks the error of the difference
    naive = math.hypot(cmp.first.flow1.stderr, cmp.second.flow1.stderr)
    assert cmp.diff_flow1.stderr < naive
    # passive endpoints can only help: multi dominates single at equal share
    assert cmp.diff_flow1.mean > 0.0
    assert cmp.diff_flow2.mean > 3 * cmp.diff_flow2.stderr


def test_usage_heatmap_pinned_and_bounded():
    tiny = build_grid(2, 1)
    params = SimParams(link=LinkModel.direct(1.0), q=1.0, trials=64, seed=0)
    res = usage_heatmap(tiny, params, 0, 1, DistanceMetric.l1())
    assert res.rate.mean == 1.0
    assert list(res.usage) == [1.0, 1.0]

    g = build_grid(5, 5)
    params = _params()
    alice, bob = g.node_at(0, 2), g.node_at(4, 2)
    res = usage_heatmap(g, params, alice, bob, L2)
    solo = estimate_local_rate(g, params, alice, bob, L2)
    assert res.rate == solo
    assert np.all(res.usage >= 0.0) and np.all(res.usage <= 1.0)
    # terminal involvement upper-bounds every repeater's involvement
    assert res.usage[alice] == res.usage[bob]
    assert np.all(res.usage <= res.usage[alice] + 1e-12)


def test_pareto_frontier_shapes():
    assert pareto_frontier([]) == []
    assert pareto_frontier([(0.3, 0.4)]) == [(0.3, 0.4)]
    kept = pareto_frontier([(0.0, 1.0), (0.6, 0.6), (1.0, 0.0)])
    assert kept == [(0.0, 1.0), (0.6, 0.6), (1.0, 0.0)]
    collinear = pareto_frontier([(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)])
    assert collinear == [(0.0, 1.0), (1.0, 0.0)]
    dominated = pareto_frontier(
        [(0.0, 1.0), (0.2, 0.2), (0.6, 0.6), (1.0, 0.0)])
    assert (0.2, 0.2) not in dominated
    trimmed = pareto_frontier([(0.0, 0.5), (0.2, 1.0), (1.0, 0.0)])
    assert trimmed == [(0.2, 1.0), (1.0, 0.0)]


def test_strategy_validation():
    with pytest.raises(ValueError):
        SingleFlowTimeShare(1.5)
    with pytest.raises(ValueError):
        MultiFlowTimeShare(-0.1)
    with pytest.raises(ValueError):
        AngledBoundary(theta_deg=120.0)
    with pytest.raises(ValueError):
        AxisBoundary(axis="z", offset=0)
    g, f1, _ = _parallel_setup()
    clash = FlowSpec(f1.alice, g.node_at(3, 3), L2)
    with pytest.raises(ValueError):
        simulate_two_flows(g, _params(trials=10), f1, clash,
                           SingleFlowTimeShare(0.5))
