"""Monte Carlo toolkit for entanglement routing on repeater lattices.

Simulates the two-phase time-slot protocol on 2-d grid networks:
external link generation on every edge, then simultaneous local Bell
measurements pairing link qubits inside repeaters. Ships a global
greedy multipath rule, a distance-driven local rule, two-flow sharing
strategies, closed-form bounds, an exact small-lattice oracle, and a
reproducible experiment driver (`entroute` command).
"""

from .analysis import (
    ScalingFit,
    boosted_link_prob,
    exact_rate_oracle,
    fit_scaling,
    linear_chain_rate,
    local_rate_lower_bound,
    lower_bound_exponent,
    min_cut_upper_bound,
)
from .engine import (
    BATCH_SIZE,
    LinkInstance,
    RateEstimate,
    SimParams,
    connectivity_probability,
    derive_seed,
    run_batched,
    run_trials,
    trial_stream,
)
from .multiflow import (
    AngledBoundary,
    AxisBoundary,
    FlowSpec,
    HeatmapResult,
    MultiFlowTimeShare,
    RegionPoint,
    SingleFlowTimeShare,
    SpatialDivision,
    StrategyComparison,
    TwoFlowRates,
    compare_strategies,
    pareto_frontier,
    rate_region,
    simulate_two_flows,
    spatial_regions,
    usage_heatmap,
)
from .routing_global import (
    GlobalRateSummary,
    PathSet,
    ShortestPathStat,
    estimate_global_rates,
    estimate_greedy_rate,
    estimate_optimal_upper_bound,
    greedy_route,
    instance_rate_global,
    shortest_path_stat,
)
from .routing_local import (
    Chain,
    DistanceMetric,
    build_recursive_metric,
    displacement_metric,
    displacement_rate_table,
    enumerate_node_decisions,
    estimate_local_rate,
    extract_chains,
    instance_rate_local,
    local_rule_decide,
    local_slot_value,
    parse_metric,
)
from .topology import (
    LinkModel,
    Topology,
    build_grid,
    l1_distance,
    l2_distance,
    link_success_prob,
    transmissivity,
)

__version__ = "0.1.0"

__all__ = [
    "AngledBoundary",
    "AxisBoundary",
    "BATCH_SIZE",
    "Chain",
    "DistanceMetric",
    "FlowSpec",
    "GlobalRateSummary",
    "HeatmapResult",
    "LinkInstance",
    "LinkModel",
    "MultiFlowTimeShare",
    "PathSet",
    "RateEstimate",
    "RegionPoint",
    "ScalingFit",
    "ShortestPathStat",
    "SimParams",
    "SingleFlowTimeShare",
    "SpatialDivision",
    "StrategyComparison",
    "Topology",
    "TwoFlowRates",
    "boosted_link_prob",
    "build_grid",
    "build_recursive_metric",
    "compare_strategies",
    "connectivity_probability",
    "derive_seed",
    "displacement_metric",
    "displacement_rate_table",
    "enumerate_node_decisions",
    "estimate_global_rates",
    "estimate_greedy_rate",
    "estimate_local_rate",
    "estimate_optimal_upper_bound",
    "exact_rate_oracle",
    "extract_chains",
    "fit_scaling",
    "greedy_route",
    "instance_rate_global",
    "instance_rate_local",
    "l1_distance",
    "l2_distance",
    "linear_chain_rate",
    "link_success_prob",
    "local_rate_lower_bound",
    "local_rule_decide",
    "local_slot_value",
    "lower_bound_exponent",
    "min_cut_upper_bound",
    "pareto_frontier",
    "parse_metric",
    "rate_region",
    "run_batched",
    "run_trials",
    "shortest_path_stat",
    "simulate_two_flows",
    "spatial_regions",
    "transmissivity",
    "trial_stream",
    "usage_heatmap",
]
