"""Acceptance suite: eleven end-to-end behavioural criteria.

Each criterion gets exactly one test function, so ``pytest -v`` prints
one pass/fail line per criterion. Heavy simulations are shared through
session-scoped fixtures. All seeds are fixed; the whole suite is
deterministic for a given build.
"""

import math

import numpy as np
import pytest

from entroute._kernels import greedy_batch
from entroute.analysis import (
    exact_rate_oracle,
    fit_scaling,
    local_rate_lower_bound,
    min_cut_upper_bound,
)
from entroute.engine import (
    LinkInstance,
    SimParams,
    derive_seed,
    sample_external_phase,
    trial_stream,
)
from entroute.multiflow import (
    AxisBoundary,
    FlowSpec,
    MultiFlowTimeShare,
    SingleFlowTimeShare,
    SpatialDivision,
    compare_strategies,
    simulate_two_flows,
    usage_heatmap,
)
from entroute.presets import auto_grid, centered_endpoints
from entroute.routing_global import (
    estimate_global_rates,
    greedy_route,
    instance_rate_global,
)
from entroute.routing_local import (
    DistanceMetric,
    displacement_metric,
    displacement_rate_table,
    estimate_local_rate,
    extract_chains,
    local_rule_decide,
)
from entroute.topology import LinkModel, build_grid

L1 = DistanceMetric.l1()
L2 = DistanceMetric.l2()
MARGIN = 8


def _placement(dx, dy, margin=MARGIN):
    w, h = auto_grid(dx, dy, margin)
    g = build_grid(w, h)
    (ax, ay), (bx, by) = centered_endpoints(w, h, dx, dy)
    return g, g.node_at(ax, ay), g.node_at(bx, by)


def _local_curve(p, q, placements, trials, seed, metric_factory):
    """Local-rule rate estimates over a placement family."""
    link = LinkModel.direct(p)
    ests = []
    for dx, dy in placements:
        g, a, b = _placement(dx, dy)
        params = SimParams(link=link, q=q, trials=trials,
                           seed=derive_seed(seed, dx, dy))
        ests.append(estimate_local_rate(g, params, a, b,
                                        metric_factory(g, a, b)))
    return ests


def _zdiff(x, y):
    """Significance of mean(x) - mean(y) for independent estimates."""
    return (x.mean - y.mean) / math.hypot(x.stderr, y.stderr)


# ------------------------------------------------------------- fixtures


@pytest.fixture(scope="session")
def flatness_runs():
    """Greedy-rate summaries on diagonal placements at q = 1."""
    out = {}
    for p, ns in ((0.6, (10, 15, 20)), (0.45, (10, 20))):
        for n in ns:
            g, a, b = _placement(n, n)
            params = SimParams(link=LinkModel.direct(p), q=1.0,
                               trials=100_000, seed=derive_seed(1, n, n))
            out[(p, n)] = estimate_global_rates(g, params, a, b)
    return out


@pytest.fixture(scope="session")
def multipath_fits():
    """Decay-base fits against Manhattan separation at (0.6, 0.9)."""
    placements = [(k, k) for k in range(2, 9)]
    ns = [2 * k for k, _ in placements]
    link = LinkModel.direct(0.6)
    loc, gre = [], []
    for dx, dy in placements:
        g, a, b = _placement(dx, dy)
        params = SimParams(link=link, q=0.9, trials=50_000,
                           seed=derive_seed(4, dx, dy))
        loc.append(estimate_local_rate(g, params, a, b, L2))
        gre.append(estimate_global_rates(g, params, a, b).greedy)
    return ns, fit_scaling(ns, loc), fit_scaling(ns, gre)


@pytest.fixture(scope="session")
def noncrossing_flows():
    """Two flows on opposite sides of a 6-hop box inside a 23x23 grid."""
    g = build_grid(23, 23)
    f1 = FlowSpec(g.node_at(8, 8), g.node_at(14, 8), L2)
    f2 = FlowSpec(g.node_at(8, 14), g.node_at(14, 14), L2)
    params = SimParams(link=LinkModel.direct(0.9), q=0.9,
                       trials=50_000, seed=7)

    def run(strategy):
        return simulate_two_flows(g, params, f1, f2, strategy)

    return {
        "solo1": run(SingleFlowTimeShare(1.0)),
        "solo2": run(SingleFlowTimeShare(0.0)),
        "spatial": {
            off: run(SpatialDivision(AxisBoundary(axis="y", offset=off)))
            for off in (10, 11, 12)
        },
        "multi_full": run(MultiFlowTimeShare(1.0)),
    }


@pytest.fixture(scope="session")
def recursive_metric_data():
    """Displacement tables for the iterated inverse-rate metric and the
    rate curves they induce, alongside the plain-norm curves."""
    link = LinkModel.direct(0.6)

    # Table cells must resolve the rate ordering of neighbouring
    # displacements: a frozen inversion from cell noise misroutes every
    # trial of every curve that consults it. The cost of resolving the
    # few-percent gaps between equal-sum cells grows like the inverse
    # rate, so the trustworthy table depth -- and with it the fit
    # window -- is bounded at desk scale. Depth 12 at 40k trials keeps
    # the region the n <= 10 curves exercise well separated.
    def build_table(factory, seed):
        params = SimParams(link=link, q=0.9, trials=40_000, seed=seed,
                           stop_rel_err=0.03)
        return displacement_rate_table(params, factory, max_sep=12, margin=6)

    tab_l1 = build_table(lambda t, a, b: L1, derive_seed(9, 1))

    def metric_i1(t, a, b):
        return displacement_metric(t, (a, b), tab_l1)

    tab_i1 = build_table(metric_i1, derive_seed(9, 2))

    def metric_i2(t, a, b):
        return displacement_metric(t, (a, b), tab_i1)

    ns = [4, 6, 8, 10]
    placements = [(n, 0) for n in ns]
    fits = {}
    for name, factory in (
        ("L1", lambda t, a, b: L1),
        ("L2", lambda t, a, b: L2),
        ("i1", metric_i1),
        ("i2", metric_i2),
    ):
        ests = _local_curve(0.6, 0.9, placements, 100_000, 93, factory)
        fits[name] = fit_scaling(ns, ests)
    return fits


@pytest.fixture(scope="session")
def exponent_ratio_fits():
    ns = [4, 6, 8, 10, 12, 14]
    placements = [(n, 0) for n in ns]

    def ratio(p, q, seed):
        ests = _local_curve(p, q, placements, 30_000, seed,
                            lambda t, a, b: L2)
        fit = fit_scaling(ns, ests)
        return fit.decay_base / (p * q), fit.decay_base_err / (p * q)

    p_sweep = [(p, *ratio(p, 0.9, 101)) for p in (0.55, 0.65, 0.75, 0.85, 0.95)]
    q_sweep = [(q, *ratio(0.6, q, 102)) for q in (0.7, 0.8, 0.9)]
    return p_sweep, q_sweep


# ------------------------------------------------------------- criteria


def test_criterion_01_percolation_flatness(flatness_runs):
    """Above the percolation threshold the multipath rate is distance
    independent; below it the rate decays exponentially."""
    flat10 = flatness_runs[(0.6, 10)].greedy
    flat20 = flatness_runs[(0.6, 20)].greedy
    rel = abs(flat10.mean - flat20.mean) / flat10.mean
    assert rel < 0.10, f"supercritical rate drifted {rel:.1%} from n=10 to n=20"

    dec10 = flatness_runs[(0.45, 10)].greedy
    dec20 = flatness_runs[(0.45, 20)].greedy
    ratio = dec20.mean / dec10.mean
    assert ratio < 0.2, f"subcritical rate only dropped to {ratio:.3f}"


def test_criterion_02_per_instance_sandwich():
    """Every sampled slot obeys q^(k1-1) <= value <= 4 q^(k1-1), and the
    mean greedy rate sits below the mean optimal-protocol bound."""
    q = 0.9
    g = build_grid(13, 13)
    a, b = g.node_at(4, 6), g.node_at(8, 6)
    rng = np.random.default_rng(23)
    up_mat = (rng.random((10_000, g.num_edges)) < 0.6).astype(np.uint8)
    scores, k1, _, _ = greedy_batch(
        up_mat, g.incident_edges, g.neighbour_nodes, g.degrees, a, b, q, 4)
    connected = k1 >= 0
    low = q ** (np.maximum(k1, 1) - 1.0)
    assert np.all(scores[connected] >= low[connected] - 1e-9)
    assert np.all(scores[connected] <= 4.0 * low[connected] + 1e-9)
    assert np.all(scores[~connected] == 0.0)

    params = SimParams(link=LinkModel.direct(0.6), q=q, trials=100_000, seed=24)
    summary = estimate_global_rates(g, params, a, b)
    z = _zdiff(summary.optimal_upper_bound, summary.greedy)
    assert z > 3.0, f"upper bound not above greedy rate (z={z:.1f})"


def test_criterion_03_capacity_gap_band(flatness_runs):
    """Supercritical multipath routing lands within a small constant
    factor of the min-cut capacity bound."""
    g, a, b = _placement(10, 10)
    cut = min_cut_upper_bound(g, LinkModel.direct(0.6), a, b)
    assert cut == pytest.approx(5.287712379549449, rel=1e-12)
    for n in (10, 15, 20):
        greedy = flatness_runs[(0.6, n)].greedy
        factor = cut / greedy.mean
        assert 2.5 <= factor <= 5.0, f"capacity gap {factor:.2f} at n={n}"


def test_criterion_04_multipath_advantage(multipath_fits):
    """The local rule beats linear-chain scaling: decay base above p*q
    by more than three fitted errors, global-knowledge base at least as
    good, and every measured axis rate above the analytic bound."""
    _, fit_loc, fit_g = multipath_fits
    gap = fit_loc.decay_base - 0.54
    assert gap > 3 * fit_loc.decay_base_err, (
        f"f_loc={fit_loc.decay_base:.4f}±{fit_loc.decay_base_err:.4f} "
        f"does not clear pq=0.54")
    slack = 3 * math.hypot(fit_loc.decay_base_err, fit_g.decay_base_err)
    assert fit_g.decay_base >= fit_loc.decay_base - slack

    link = LinkModel.direct(0.6)
    for n in (4, 6, 8, 10):
        g, a, b = _placement(n, 0)
        params = SimParams(link=link, q=0.9, trials=50_000,
                           seed=derive_seed(44, n))
        est = estimate_local_rate(g, params, a, b, L2)
        bound = local_rate_lower_bound(0.6, 0.9, n)
        z = (est.mean - bound) / est.stderr
        assert z > 3.0, f"axis rate at n={n} not above analytic bound (z={z:.1f})"


def test_criterion_05_oracle_equivalence():
    """Monte Carlo means match exact enumeration on small grids for
    both routing rules across three parameter pairs."""
    for shape in ((3, 2), (3, 3)):
        g = build_grid(*shape)
        a, b = 0, g.num_nodes - 1
        for p, q in ((0.3, 0.7), (0.6, 0.9), (0.9, 0.9)):
            link = LinkModel.direct(p)
            params = SimParams(link=link, q=q, trials=100_000,
                               seed=derive_seed(5, shape[0], shape[1]))
            mc = estimate_global_rates(g, params, a, b).greedy
            exact = exact_rate_oracle(g, link, q, a, b, "greedy")
            z = (mc.mean - exact) / mc.stderr
            assert abs(z) < 4.0, f"greedy {shape} ({p},{q}): z={z:+.2f}"
            mc = estimate_local_rate(g, params, a, b, L2)
            exact = exact_rate_oracle(g, link, q, a, b, L2)
            z = (mc.mean - exact) / mc.stderr
            assert abs(z) < 4.0, f"local {shape} ({p},{q}): z={z:+.2f}"


def test_criterion_06_diagonal_enhancement():
    """At equal Manhattan separation the local rule delivers more along
    the lattice diagonal than along an axis."""
    link = LinkModel.direct(0.6)
    ests = {}
    for dx, dy in ((6, 6), (12, 0)):
        g, a, b = _placement(dx, dy)
        params = SimParams(link=link, q=0.9, trials=100_000,
                           seed=derive_seed(6, dx, dy))
        ests[(dx, dy)] = estimate_local_rate(g, params, a, b, L2)
    z = _zdiff(ests[(6, 6)], ests[(12, 0)])
    assert z > 3.0, f"diagonal not above axis (z={z:.1f})"


def test_criterion_07_two_flow_regions(noncrossing_flows):
    """Spatial division nearly preserves both solo rates at once and
    beats time sharing; keeping all endpoints passive leaves the
    off-slot flow a positive rate but costs the crossing geometry a
    little of its peak rate."""
    r1_max = noncrossing_flows["solo1"].flow1
    r2_max = noncrossing_flows["solo2"].flow2

    best = None
    for rates in noncrossing_flows["spatial"].values():
        deficit = min(rates.flow1.mean / r1_max.mean,
                      rates.flow2.mean / r2_max.mean)
        if best is None or deficit > best[0]:
            best = (deficit, rates)
    deficit, rates = best
    assert deficit >= 0.9, f"best spatial point keeps only {deficit:.1%}"
    z1 = (rates.flow1.mean - r1_max.mean / 2) / math.hypot(
        rates.flow1.stderr, r1_max.stderr / 2)
    z2 = (rates.flow2.mean - r2_max.mean / 2) / math.hypot(
        rates.flow2.stderr, r2_max.stderr / 2)
    assert z1 > 3.0 and z2 > 3.0, "spatial point does not beat the midpoint"

    leftover = noncrossing_flows["multi_full"].flow2
    assert leftover.mean > 3 * leftover.stderr, "no leftover second-flow rate"

    g = build_grid(23, 23)
    f1 = FlowSpec(g.node_at(8, 8), g.node_at(14, 14), L2)
    f2 = FlowSpec(g.node_at(8, 14), g.node_at(14, 8), L2)
    params = SimParams(link=LinkModel.direct(0.9), q=0.9,
                       trials=200_000, seed=71)
    cmp = compare_strategies(g, params, f1, f2,
                             SingleFlowTimeShare(1.0), MultiFlowTimeShare(1.0))
    z = cmp.diff_flow1.mean / cmp.diff_flow1.stderr
    assert z > 3.0, (
        f"crossing peak: dedicated endpoints did not beat passive ones "
        f"(diff={cmp.diff_flow1.mean:.2e}, z={z:.1f})")


def test_criterion_08_heatmap_concentration():
    """Delivered ebits ride on repeaters hugging the straight line
    between the endpoints."""
    g = build_grid(15, 15)
    params = SimParams(link=LinkModel.direct(0.9), q=0.9,
                       trials=100_000, seed=8)
    res = usage_heatmap(g, params, g.node_at(4, 7), g.node_at(10, 7), L2)
    near, far = [], []
    for node, (x, y) in enumerate(g.coords):
        hops = abs(y - 7) + max(0, 4 - x, x - 10)  # hops to the segment
        if hops <= 1:
            near.append(res.usage[node])
        elif hops >= 4:
            far.append(res.usage[node])
    ratio = float(np.mean(near) / np.mean(far))
    assert ratio > 5.0, f"near/far usage ratio only {ratio:.2f}"


def test_criterion_09_recursive_metric_convergence(recursive_metric_data):
    """Inverting measured rates as distances converges in two rounds:
    the second iteration is statistically indistinguishable from the
    euclidean-metric curve and at least as good as the taxicab one."""
    fits = recursive_metric_data
    f = {k: v.decay_base for k, v in fits.items()}
    e = {k: v.decay_base_err for k, v in fits.items()}
    # first iteration degrades on the taxicab start: report, not assert
    print(f"\niteration ordering: f_i1={f['i1']:.4f}±{e['i1']:.4f} "
          f"{'<' if f['i1'] < f['L1'] else '>='} f_L1={f['L1']:.4f}±{e['L1']:.4f}")
    print(f"convergence: f_i2={f['i2']:.4f}±{e['i2']:.4f} vs "
          f"f_L2={f['L2']:.4f}±{e['L2']:.4f}")
    assert f["i2"] - f["L1"] > -3 * math.hypot(e["i2"], e["L1"]), (
        f"second iteration fell below the taxicab curve: "
        f"f_i2={f['i2']:.4f} f_L1={f['L1']:.4f}")
    gap = abs(f["i2"] - f["L2"])
    tol = 3 * math.hypot(e["i2"], e["L2"])
    assert gap <= tol, (
        f"f_i2={f['i2']:.4f} and f_L2={f['L2']:.4f} differ by {gap:.4f} "
        f"(> {tol:.4f})")


def test_criterion_10_exponent_ratio_surface(exponent_ratio_fits):
    """The multipath advantage f/(pq) shrinks toward 1 as links get
    more reliable, and is insensitive to the swap success rate."""
    p_sweep, q_sweep = exponent_ratio_fits
    hard = 0
    soft = 0
    for (p0, r0, e0), (p1, r1, e1) in zip(p_sweep, p_sweep[1:]):
        if r1 > r0:
            soft += 1
            if r1 - r0 > 3 * math.hypot(e0, e1):
                hard += 1
    assert hard == 0, f"significant ratio increase along p: {p_sweep}"
    assert soft <= 1, f"more than one inversion along p: {p_sweep}"

    ratios = [r for _, r, _ in q_sweep]
    spread = (max(ratios) - min(ratios)) / min(ratios)
    assert spread < 0.10, f"f/(pq) varies {spread:.1%} across q: {q_sweep}"


def test_criterion_11_engine_properties():
    """Worker-count invariance, one-over-root-trials error scaling, and
    structural routing invariants over a ten-thousand-instance fuzz."""
    g = build_grid(10, 10)
    a, b = 0, g.num_nodes - 1
    link = LinkModel.direct(0.6)
    params = SimParams(link=link, q=0.9, trials=20_000, seed=111)
    assert estimate_global_rates(g, params, a, b) == \
        estimate_global_rates(g, params, a, b, workers=4)
    assert estimate_local_rate(g, params, a, b, L2) == \
        estimate_local_rate(g, params, a, b, L2, workers=4)

    trials = [2000, 8000, 32_000, 128_000]
    errs = [estimate_local_rate(
        g, SimParams(link=link, q=0.9, trials=t, seed=112), a, b, L2).stderr
        for t in trials]
    slope = float(np.polyfit(np.log(trials), np.log(errs), 1)[0])
    assert abs(slope + 0.5) < 0.05, f"stderr scaling slope {slope:.3f}"

    fuzz = build_grid(6, 6)
    fa, fb = fuzz.node_at(1, 1), fuzz.node_at(4, 4)
    metric = L2
    d_a = metric.distances_from(fuzz, fa)
    d_b = metric.distances_from(fuzz, fb)
    probs = LinkModel.direct(0.5).edge_probs(fuzz)
    edge_nodes = fuzz.edge_nodes
    for t in range(10_000):
        rng = trial_stream(113, t)
        up = sample_external_phase(probs, rng)
        inst = LinkInstance(up=up)
        # greedy: edge-disjoint up-paths joining the endpoints
        seen = set()
        ps = greedy_route(fuzz, inst, fa, fb)
        for path in ps.paths:
            assert not (seen & set(path))
            seen |= set(path)
            node = fa
            for eid in path:
                assert up[eid] == 1
                u, v = edge_nodes[eid]
                assert node in (u, v)
                node = int(v) if node == u else int(u)
            assert node == fb
        assert instance_rate_global(ps.lengths, 0.9) >= 0.0
        # local: memory exclusivity holds (extract_chains raises on any
        # double pairing) and passive endpoints never swap
        coins = rng.random((fuzz.num_nodes, 5))
        decisions = {}
        for u in range(fuzz.num_nodes):
            if u in (fa, fb):
                continue
            pairs = local_rule_decide(fuzz, up, u, d_a, d_b,
                                      metric.tie_tol, coins[u])
            if pairs:
                decisions[u] = pairs
        chains = extract_chains(fuzz, inst, decisions)
        used = {}
        for c in chains:
            for eid in c.edges:
                assert up[eid] == 1
                used[eid] = used.get(eid, 0) + 1
                assert used[eid] == 1
            assert fa not in c.nodes[1:-1]
            assert fb not in c.nodes[1:-1]
