"""Experiment driver: config in, deterministic CSV/JSON out.

A run is described by a single JSON config document; command-line
flags override its top-level fields. Tabular sweeps come out as CSV
with a leading `# config:` comment echoing the fully resolved config
(parsing that line and re-running reproduces the file byte for byte);
single reports come out as JSON embedding the same resolved config.
Numbers are written with shortest round-trip formatting. Output files
are written to a temp file and renamed, so failures never leave a
partial file behind. Figures are opt-in via --plot and are rendered
next to the data file.

Exit codes: 0 success, 1 config error, 2 self-check failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from typing import Callable, Sequence

import numpy as np

from . import presets
from .analysis import (
    boosted_link_prob,
    exact_rate_oracle,
    fit_scaling,
    linear_chain_rate,
    lower_bound_exponent,
    local_rate_lower_bound,
    min_cut_upper_bound,
)
from .engine import SimParams, derive_seed
from .multiflow import (
    FlowSpec,
    angled_boundary_sweep,
    axis_boundary_sweep,
    pareto_frontier,
    rate_region,
    timeshare_sweep,
    usage_heatmap,
)
from .routing_global import estimate_greedy_rate, estimate_optimal_upper_bound
from .routing_local import (
    DistanceMetric,
    build_recursive_metric,
    displacement_metric,
    displacement_rate_table,
    estimate_local_rate,
    RATE_FLOOR,
)
from .topology import LinkModel, Topology, build_grid

WORKERS_ENV = "ENTROUTE_WORKERS"
DEFAULT_TRIALS = 100_000
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CHECK = 2


class ConfigError(Exception):
    """Invalid run configuration."""


# ---------------------------------------------------------------- helpers


def _fmt(value) -> str:
    """Shortest round-trip cell formatting."""
    if isinstance(value, (bool, str)):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp.", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _csv_text(comments: Sequence[str], header: Sequence[str],
              rows: Sequence[Sequence]) -> str:
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _json_text(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config field {key!r} is required")
    return cfg[key]


def _resolve_link(cfg: dict) -> tuple[LinkModel, dict]:
    if "p" in cfg and "link" in cfg:
        raise ConfigError("give either 'p' or 'link', not both")
    if "p" in cfg:
        link = LinkModel.direct(float(cfg["p"]))
    elif "link" in cfg:
        spec = cfg["link"]
        if not isinstance(spec, dict) or "kind" not in spec:
            raise ConfigError("'link' must be an object with a 'kind'")
        kind = spec["kind"]
        try:
            if kind == "direct":
                link = LinkModel.direct(spec["p"])
            elif kind == "channel":
                link = LinkModel.channel(spec["p0"])
            elif kind == "fibre":
                link = LinkModel.fibre(spec["alpha"], spec["lengths"])
            else:
                raise ConfigError(f"unknown link kind {kind!r}")
        except KeyError as e:
            raise ConfigError(f"link model missing field {e}") from e
    else:
        raise ConfigError("config needs a link model ('p' or 'link')")
    return link, link.to_dict()


def _resolve_topology(cfg: dict) -> tuple[Topology, dict]:
    """Topology from 'grid': [W, H] or 'topology': path to JSON."""
    if "grid" in cfg and "topology" in cfg:
        raise ConfigError("give either 'grid' or 'topology', not both")
    if "grid" in cfg:
        dims = cfg["grid"]
        if (not isinstance(dims, (list, tuple)) or len(dims) != 2
                or not all(isinstance(d, int) and d >= 1 for d in dims)):
            raise ConfigError("'grid' must be [width, height] of ints >= 1")
        channels = int(cfg.get("channels", 1))
        top = build_grid(dims[0], dims[1], channels=channels)
        echo = {"grid": [int(dims[0]), int(dims[1])]}
        if channels != 1:
            echo["channels"] = channels
        return top, echo
    if "topology" in cfg:
        path = cfg["topology"]
        try:
            with open(path) as fh:
                top = Topology.from_json(fh.read())
        except OSError as e:
            raise ConfigError(f"cannot read topology file {path!r}: {e}") from e
        return top, {"topology": path}
    raise ConfigError("config needs 'grid' or 'topology'")


def _resolve_metric(spec) -> tuple[DistanceMetric, object]:
    """Metric from "l1"/"l2" or {"tables": path-to-table-file}."""
    if spec is None:
        spec = "l2"
    if isinstance(spec, str):
        name = spec.strip().lower()
        if name == "l1":
            return DistanceMetric.l1(), "l1"
        if name == "l2":
            return DistanceMetric.l2(), "l2"
        raise ConfigError(f"unknown metric {spec!r} (use 'l1', 'l2', or tables)")
    if isinstance(spec, dict) and "tables" in spec:
        path = spec["tables"]
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read metric tables {path!r}: {e}") from e
        metric = None
        for table in doc.get("tables", []):
            part = DistanceMetric.table_from_json(json.dumps(table))
            metric = part if metric is None else metric.merge(part)
        if metric is None:
            raise ConfigError(f"metric table file {path!r} holds no tables")
        return metric, {"tables": path}
    raise ConfigError(f"bad metric spec {spec!r}")


def _node(top: Topology, spec, what: str) -> int:
    if isinstance(spec, int):
        if not 0 <= spec < top.num_nodes:
            raise ConfigError(f"{what}: node id {spec} out of range")
        return spec
    if isinstance(spec, (list, tuple)) and len(spec) == 2:
        try:
            return top.node_at(int(spec[0]), int(spec[1]))
        except KeyError:
            raise ConfigError(
                f"{what}: no node at coordinate {tuple(spec)}") from None
    raise ConfigError(f"{what} must be a node id or [x, y] coordinate")


def _node_echo(spec) -> object:
    if isinstance(spec, (list, tuple)):
        return [int(spec[0]), int(spec[1])]
    return int(spec)


def _seed(cfg: dict) -> int:
    if "seed" not in cfg:
        raise ConfigError("config field 'seed' is required (no implicit seeding)")
    seed = cfg["seed"]
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("'seed' must be a non-negative integer")
    return seed


def _trials(cfg: dict) -> int:
    trials = cfg.get("trials", DEFAULT_TRIALS)
    if not isinstance(trials, int) or trials < 1:
        raise ConfigError("'trials' must be a positive integer")
    return trials


def _q(cfg: dict) -> float:
    q = _require(cfg, "q")
    if not isinstance(q, (int, float)) or not 0.0 <= float(q) <= 1.0:
        raise ConfigError("'q' must be a number in [0, 1]")
    return float(q)


def _placements(cfg: dict) -> list[tuple[int, int]]:
    spec = _require(cfg, "placements")
    if isinstance(spec, dict):
        if "diagonal" in spec:
            args = spec["diagonal"]
            return presets.diagonal_placements(*[int(a) for a in args])
        if "axis" in spec:
            args = spec["axis"]
            return presets.axis_placements(*[int(a) for a in args])
        raise ConfigError("'placements' object must give 'diagonal' or 'axis'")
    if not isinstance(spec, list) or not spec:
        raise ConfigError("'placements' must be a non-empty list or a range spec")
    out = []
    for item in spec:
        if (not isinstance(item, (list, tuple)) or len(item) != 2
                or not all(isinstance(v, int) for v in item)):
            raise ConfigError(f"bad placement {item!r}; expected [X, Y]")
        if item[0] < 0 or item[1] < 0 or item[0] + item[1] < 1:
            raise ConfigError(f"placement {item!r} must be non-negative and non-zero")
        out.append((int(item[0]), int(item[1])))
    return out


def _placement_topology(cfg: dict, dx: int, dy: int) -> tuple[Topology, int, int]:
    """Topology and endpoints for one placement (fixed or auto grid)."""
    grid = cfg.get("grid", {"margin": presets.DEFAULT_MARGIN})
    if isinstance(grid, dict):
        margin = int(grid.get("margin", presets.DEFAULT_MARGIN))
        w, h = presets.auto_grid(dx, dy, margin)
    else:
        w, h = int(grid[0]), int(grid[1])
    top = build_grid(w, h, channels=int(cfg.get("channels", 1)))
    try:
        (ax, ay), (bx, by) = presets.centered_endpoints(w, h, dx, dy)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return top, top.node_at(ax, ay), top.node_at(bx, by)


def _grid_echo(cfg: dict) -> dict:
    grid = cfg.get("grid", {"margin": presets.DEFAULT_MARGIN})
    if isinstance(grid, dict):
        echo = {"grid": {"margin": int(grid.get("margin", presets.DEFAULT_MARGIN))}}
    elif (isinstance(grid, (list, tuple)) and len(grid) == 2
            and all(isinstance(d, int) and d >= 1 for d in grid)):
        echo = {"grid": [int(grid[0]), int(grid[1])]}
    else:
        raise ConfigError("'grid' must be [width, height] or {\"margin\": m}")
    channels = int(cfg.get("channels", 1))
    if channels != 1:
        echo["channels"] = channels
    return echo


def _uniform_edge_prob(top: Topology, link: LinkModel) -> float:
    probs = link.edge_probs(top)
    if float(probs.max() - probs.min()) > 1e-12:
        raise ConfigError(
            "linear-chain baseline needs a uniform edge probability")
    return float(probs[0])


def _estimate_dict(est) -> dict:
    return {"mean": float(est.mean), "stderr": float(est.stderr),
            "trials": int(est.trials)}


# ---------------------------------------------------------------- runners

Runner = Callable[[dict, int], tuple[str, Callable[[str], None] | None, int]]


def _run_rate(cfg: dict, workers: int):
    if cfg.get("kind") == "rate-vs-distance":
        return _run_rate_vs_distance(cfg, workers)
    return _run_rate_single(cfg, workers)


def _run_rate_single(cfg: dict, workers: int):
    link, link_echo = _resolve_link(cfg)
    top, top_echo = _resolve_topology(cfg)
    q, trials, seed = _q(cfg), _trials(cfg), _seed(cfg)
    rule = cfg.get("rule", "local")
    if rule not in ("greedy", "local"):
        raise ConfigError("'rule' must be 'greedy' or 'local'")
    alice = _node(top, _require(cfg, "alice"), "alice")
    bob = _node(top, _require(cfg, "bob"), "bob")
    resolved = {"kind": "rate-single", **top_echo, "link": link_echo,
                "q": q, "trials": trials, "seed": seed, "rule": rule,
                "alice": _node_echo(cfg["alice"]), "bob": _node_echo(cfg["bob"])}
    params = SimParams(link=link, q=q, trials=trials, seed=seed)
    if rule == "local":
        metric, metric_echo = _resolve_metric(cfg.get("metric"))
        resolved["metric"] = metric_echo
        est = estimate_local_rate(top, params, alice, bob, metric, workers=workers)
    else:
        est = estimate_greedy_rate(top, params, alice, bob, workers=workers)
    report = {"kind": "rate-single", "rule": rule, "seed": seed,
              "rate": _estimate_dict(est), "config": resolved}
    return _json_text(report), None, EXIT_OK


def _run_rate_vs_distance(cfg: dict, workers: int):
    link, link_echo = _resolve_link(cfg)
    q, trials, seed = _q(cfg), _trials(cfg), _seed(cfg)
    placements = _placements(cfg)
    metric, metric_echo = _resolve_metric(cfg.get("metric"))
    resolved = {"kind": "rate-vs-distance", **_grid_echo(cfg),
                "link": link_echo, "q": q, "trials": trials, "seed": seed,
                "metric": metric_echo,
                "placements": [[x, y] for x, y in placements]}
    rows = []
    plot_rows = []
    for dx, dy in placements:
        top, alice, bob = _placement_topology(cfg, dx, dy)
        p_uniform = _uniform_edge_prob(top, link)
        params = SimParams(link=link, q=q, trials=trials,
                           seed=derive_seed(seed, dx, dy))
        r_g = estimate_greedy_rate(top, params, alice, bob, workers=workers)
        r_loc = estimate_local_rate(top, params, alice, bob, metric,
                                    workers=workers)
        r_ub = estimate_optimal_upper_bound(top, params, alice, bob,
                                            workers=workers)
        r_lin = linear_chain_rate(p_uniform, q, dx + dy)
        n = max(dx, dy)
        rows.append([n, dx, dy, r_g.mean, r_g.stderr, r_loc.mean, r_loc.stderr,
                     r_lin, r_ub.mean, r_ub.stderr])
        plot_rows.append({"n": n, "R_g": r_g.mean, "R_g_err": r_g.stderr,
                          "R_loc": r_loc.mean, "R_loc_err": r_loc.stderr,
                          "R_lin": r_lin, "R_optUB": r_ub.mean,
                          "R_optUB_err": r_ub.stderr})
    header = ["n", "X", "Y", "R_g", "R_g_err", "R_loc", "R_loc_err",
              "R_lin", "R_optUB", "R_optUB_err"]
    text = _csv_text([f"config: {json.dumps(resolved, sort_keys=True)}"],
                     header, rows)

    def plotter(path: str) -> None:
        from . import plots

        plots.plot_rate_vs_distance(plot_rows, path)

    return text, plotter, EXIT_OK


def _flow(cfg: dict, top: Topology, key: str) -> tuple[FlowSpec, dict]:
    spec = _require(cfg, key)
    if not isinstance(spec, dict):
        raise ConfigError(f"'{key}' must be an object with alice/bob/metric")
    alice = _node(top, _require(spec, "alice"), f"{key}.alice")
    bob = _node(top, _require(spec, "bob"), f"{key}.bob")
    metric, metric_echo = _resolve_metric(spec.get("metric"))
    echo = {"alice": _node_echo(spec["alice"]), "bob": _node_echo(spec["bob"]),
            "metric": metric_echo}
    return FlowSpec(alice=alice, bob=bob, metric=metric), echo


def _strategy_sweeps(cfg: dict) -> tuple[list[tuple[str, list]], list[dict]]:
    families = _require(cfg, "strategies")
    if not isinstance(families, list) or not families:
        raise ConfigError("'strategies' must be a non-empty list")
    sweeps = []
    echo = []
    for fam in families:
        if not isinstance(fam, dict) or "kind" not in fam:
            raise ConfigError("each strategy needs a 'kind'")
        kind = fam["kind"]
        if kind in ("single-timeshare", "multi-timeshare"):
            shares = fam.get("shares")
            if not shares:
                raise ConfigError(f"{kind} needs a non-empty 'shares' list")
            sweeps.append((kind, timeshare_sweep(
                [float(s) for s in shares], multi=(kind == "multi-timeshare"))))
            echo.append({"kind": kind, "shares": [float(s) for s in shares]})
        elif kind == "spatial-axis":
            axis = fam.get("axis", "y")
            offsets = fam.get("offsets")
            if not offsets:
                raise ConfigError("spatial-axis needs a non-empty 'offsets' list")
            sweeps.append((kind, axis_boundary_sweep(
                axis, [int(o) for o in offsets])))
            echo.append({"kind": kind, "axis": axis,
                         "offsets": [int(o) for o in offsets]})
        elif kind == "spatial-angle":
            thetas = fam.get("thetas")
            if not thetas:
                raise ConfigError("spatial-angle needs a non-empty 'thetas' list")
            pivot = fam.get("pivot")
            pv = tuple(float(v) for v in pivot) if pivot is not None else None
            sweeps.append((kind, angled_boundary_sweep(
                [float(t) for t in thetas], pivot=pv)))
            entry = {"kind": kind, "thetas": [float(t) for t in thetas]}
            if pivot is not None:
                entry["pivot"] = [float(v) for v in pivot]
            echo.append(entry)
        else:
            raise ConfigError(f"unknown strategy kind {kind!r}")
    return sweeps, echo


def _run_region(cfg: dict, workers: int):
    link, link_echo = _resolve_link(cfg)
    top, top_echo = _resolve_topology(cfg)
    q, trials, seed = _q(cfg), _trials(cfg), _seed(cfg)
    flow1, f1_echo = _flow(cfg, top, "flow1")
    flow2, f2_echo = _flow(cfg, top, "flow2")
    sweeps, strat_echo = _strategy_sweeps(cfg)
    resolved = {"kind": "rate-region", **top_echo, "link": link_echo,
                "q": q, "trials": trials, "seed": seed,
                "flow1": f1_echo, "flow2": f2_echo, "strategies": strat_echo}
    params = SimParams(link=link, q=q, trials=trials, seed=seed)
    rows = []
    plot_rows = []
    for name, sweep in sweeps:
        for point in rate_region(top, params, flow1, flow2, sweep,
                                 workers=workers):
            rows.append([name, point.knob,
                         point.flow1.mean, point.flow1.stderr,
                         point.flow2.mean, point.flow2.stderr])
            plot_rows.append({"strategy": name, "knob": point.knob,
                              "R1": point.flow1.mean, "R2": point.flow2.mean})
    header = ["strategy", "knob", "R1", "R1_err", "R2", "R2_err"]
    text = _csv_text([f"config: {json.dumps(resolved, sort_keys=True)}"],
                     header, rows)
    frontier = pareto_frontier((r["R1"], r["R2"]) for r in plot_rows)

    def plotter(path: str) -> None:
        from . import plots

        plots.plot_rate_region(plot_rows, frontier, path)

    return text, plotter, EXIT_OK


def _run_heatmap(cfg: dict, workers: int):
    link, link_echo = _resolve_link(cfg)
    top, top_echo = _resolve_topology(cfg)
    q, trials, seed = _q(cfg), _trials(cfg), _seed(cfg)
    alice = _node(top, _require(cfg, "alice"), "alice")
    bob = _node(top, _require(cfg, "bob"), "bob")
    metric, metric_echo = _resolve_metric(cfg.get("metric"))
    resolved = {"kind": "heatmap", **top_echo, "link": link_echo,
                "q": q, "trials": trials, "seed": seed, "metric": metric_echo,
                "alice": _node_echo(cfg["alice"]), "bob": _node_echo(cfg["bob"])}
    params = SimParams(link=link, q=q, trials=trials, seed=seed)
    result = usage_heatmap(top, params, alice, bob, metric, workers=workers)
    rows = []
    plot_rows = []
    for node in range(top.num_nodes):
        x, y = top.coords[node]
        rows.append([node, x, y, float(result.usage[node])])
        plot_rows.append({"x": x, "y": y, "p_usage": float(result.usage[node])})
    comments = [
        f"config: {json.dumps(resolved, sort_keys=True)}",
        f"rate: {json.dumps(_estimate_dict(result.rate), sort_keys=True)}",
    ]
    text = _csv_text(comments, ["node", "x", "y", "p_usage"], rows)

    def plotter(path: str) -> None:
        from . import plots

        plots.plot_heatmap(plot_rows, path)

    return text, plotter, EXIT_OK


def _run_scaling(cfg: dict, workers: int):
    link, link_echo = _resolve_link(cfg)
    q, trials, seed = _q(cfg), _trials(cfg), _seed(cfg)
    placements = _placements(cfg)
    rule = cfg.get("rule", "local")
    if rule not in ("greedy", "local"):
        raise ConfigError("'rule' must be 'greedy' or 'local'")
    min_points = int(cfg.get("min_points", 4))
    n_axis = cfg.get("n_axis", "max")
    if n_axis not in ("max", "manhattan"):
        raise ConfigError("'n_axis' must be 'max' or 'manhattan'")
    metric, metric_echo = _resolve_metric(cfg.get("metric"))
    resolved = {"kind": "scaling", **_grid_echo(cfg), "link": link_echo,
                "q": q, "trials": trials, "seed": seed, "rule": rule,
                "metric": metric_echo, "min_points": min_points,
                "n_axis": n_axis,
                "placements": [[x, y] for x, y in placements]}
    ns = []
    ests = []
    points = []
    for dx, dy in placements:
        top, alice, bob = _placement_topology(cfg, dx, dy)
        params = SimParams(link=link, q=q, trials=trials,
                           seed=derive_seed(seed, dx, dy))
        if rule == "local":
            est = estimate_local_rate(top, params, alice, bob, metric,
                                      workers=workers)
        else:
            est = estimate_greedy_rate(top, params, alice, bob, workers=workers)
        n = max(dx, dy) if n_axis == "max" else dx + dy
        ns.append(n)
        ests.append(est)
        points.append({"n": n, "X": dx, "Y": dy, **_estimate_dict(est)})
    fit = fit_scaling(ns, ests, min_points=min_points)
    fit_doc = {
        "decay_base": fit.decay_base, "decay_base_err": fit.decay_base_err,
        "prefactor": fit.prefactor, "prefactor_err": fit.prefactor_err,
        "chi2_reduced": fit.chi2_reduced,
        "used_ns": list(fit.used_ns), "dropped_ns": list(fit.dropped_ns),
    }
    report = {"kind": "scaling", "fit": fit_doc, "points": points,
              "config": resolved}

    def plotter(path: str) -> None:
        from . import plots

        plots.plot_scaling(points, fit_doc, path)

    return _json_text(report), plotter, EXIT_OK


def _run_bounds(cfg: dict, workers: int):
    link, link_echo = _resolve_link(cfg)
    top, top_echo = _resolve_topology(cfg)
    q = _q(cfg)
    alice = _node(top, _require(cfg, "alice"), "alice")
    bob = _node(top, _require(cfg, "bob"), "bob")
    resolved = {"kind": "bounds", **top_echo, "link": link_echo, "q": q,
                "alice": _node_echo(cfg["alice"]), "bob": _node_echo(cfg["bob"])}

    def may(f, *args, **kwargs):
        try:
            v = f(*args, **kwargs)
        except ValueError:
            return None
        return None if isinstance(v, float) and not math.isfinite(v) else v

    ax, ay = top.coords[alice]
    bx, by = top.coords[bob]
    separation = abs(ax - bx) + abs(ay - by)
    p_uniform = None
    try:
        p_uniform = _uniform_edge_prob(top, link)
    except ConfigError:
        pass
    report = {
        "kind": "bounds",
        "separation": separation,
        "min_cut": may(min_cut_upper_bound, top, link, alice, bob),
        "min_cut_per_channel": may(min_cut_upper_bound, top, link, alice, bob,
                                   per_channel=True),
        "config": resolved,
    }
    if p_uniform is not None:
        report["repeaterless_per_link"] = (
            None if p_uniform >= 1.0 else -math.log2(1.0 - p_uniform))
        report["linear_chain"] = may(linear_chain_rate, p_uniform, q, separation)
        report["boosted_p"] = may(boosted_link_prob, p_uniform, q)
        report["beta"] = may(lower_bound_exponent, p_uniform, q)
        report["analytic_lower_bound"] = may(
            local_rate_lower_bound, p_uniform, q, separation)
    else:
        for key in ("repeaterless_per_link", "linear_chain", "boosted_p",
                    "beta", "analytic_lower_bound"):
            report[key] = None
    return _json_text(report), None, EXIT_OK


def _run_oracle_check(cfg: dict, workers: int):
    cfg = dict(cfg)
    cfg.setdefault("grid", [3, 2])
    link, link_echo = _resolve_link(cfg)
    top, top_echo = _resolve_topology(cfg)
    q, trials, seed = _q(cfg), _trials(cfg), _seed(cfg)
    alice_spec = cfg.get("alice", [0, 0])
    w = max(x for x, _ in top.coords)
    h = max(y for _, y in top.coords)
    bob_spec = cfg.get("bob", [w, h])
    alice = _node(top, alice_spec, "alice")
    bob = _node(top, bob_spec, "bob")
    rule = cfg.get("rule", "both")
    if rule not in ("greedy", "local", "both"):
        raise ConfigError("'rule' must be 'greedy', 'local', or 'both'")
    z_limit = float(cfg.get("z_limit", 4.0))
    metric, metric_echo = _resolve_metric(cfg.get("metric"))
    resolved = {"kind": "oracle-check", **top_echo, "link": link_echo,
                "q": q, "trials": trials, "seed": seed, "rule": rule,
                "metric": metric_echo, "z_limit": z_limit,
                "alice": _node_echo(alice_spec), "bob": _node_echo(bob_spec)}
    params = SimParams(link=link, q=q, trials=trials, seed=seed)
    checks = {}
    for name in ("greedy", "local"):
        if rule not in (name, "both"):
            continue
        if name == "greedy":
            oracle = exact_rate_oracle(top, link, q, alice, bob, "greedy")
            mc = estimate_greedy_rate(top, params, alice, bob, workers=workers)
        else:
            oracle = exact_rate_oracle(top, link, q, alice, bob, metric)
            mc = estimate_local_rate(top, params, alice, bob, metric,
                                     workers=workers)
        if mc.stderr > 0.0:
            z = (mc.mean - oracle) / mc.stderr
        else:
            z = 0.0 if mc.mean == oracle else math.inf
        checks[name] = {"oracle": oracle, "mc_mean": mc.mean,
                        "mc_stderr": mc.stderr, "z": z,
                        "pass": bool(abs(z) <= z_limit)}
    ok = all(c["pass"] for c in checks.values())
    report = {"kind": "oracle-check", "checks": checks, "pass": ok,
              "config": resolved}
    return _json_text(report), None, EXIT_OK if ok else EXIT_CHECK


def _run_metric_build(cfg: dict, workers: int):
    link, link_echo = _resolve_link(cfg)
    q, trials, seed = _q(cfg), _trials(cfg), _seed(cfg)
    mode = cfg.get("mode", "displacement")
    if mode not in ("recursive", "displacement"):
        raise ConfigError("'mode' must be 'recursive' or 'displacement'")
    base_spec = cfg.get("base_metric", "l2")
    base, base_echo = _resolve_metric(base_spec)
    floor = float(cfg.get("floor", RATE_FLOOR))
    top, top_echo = _resolve_topology(cfg)
    alice = _node(top, _require(cfg, "alice"), "alice")
    bob = _node(top, _require(cfg, "bob"), "bob")
    resolved = {"kind": "metric-build", "mode": mode, **top_echo,
                "link": link_echo, "q": q, "trials": trials, "seed": seed,
                "base_metric": base_echo, "floor": floor,
                "alice": _node_echo(cfg["alice"]), "bob": _node_echo(cfg["bob"])}
    report: dict = {"kind": "metric-build", "mode": mode}
    if mode == "recursive":
        pa = SimParams(link=link, q=q, trials=trials, seed=derive_seed(seed, 0))
        pb = SimParams(link=link, q=q, trials=trials, seed=derive_seed(seed, 1))
        ma = build_recursive_metric(top, pa, base, alice, floor=floor,
                                    workers=workers)
        mb = build_recursive_metric(top, pb, base, bob, floor=floor,
                                    workers=workers)
        tables = [json.loads(ma.table_to_json(alice)),
                  json.loads(mb.table_to_json(bob))]
    else:
        if base.kind == "table":
            raise ConfigError(
                "displacement mode needs an 'l1' or 'l2' base metric")
        max_sep = cfg.get("max_sep")
        if not isinstance(max_sep, int) or max_sep < 1:
            raise ConfigError("displacement mode needs integer 'max_sep' >= 1")
        margin = int(cfg.get("margin", presets.DEFAULT_MARGIN))
        resolved["max_sep"] = max_sep
        resolved["margin"] = margin
        params = SimParams(link=link, q=q, trials=trials, seed=seed)
        rates = displacement_rate_table(
            params, lambda t, a, b: base, max_sep, margin=margin,
            workers=workers)
        metric = displacement_metric(top, (alice, bob), rates, floor=floor)
        tables = [json.loads(metric.table_to_json(alice)),
                  json.loads(metric.table_to_json(bob))]
        report["displacements"] = [
            {"dx": dx, "dy": dy, **_estimate_dict(est)}
            for (dx, dy), est in sorted(rates.items())
        ]
    report["tables"] = tables
    report["config"] = resolved
    return _json_text(report), None, EXIT_OK


RUNNERS: dict[str, Runner] = {
    "rate-single": _run_rate,
    "rate-vs-distance": _run_rate,
    "rate-region": _run_region,
    "heatmap": _run_heatmap,
    "scaling": _run_scaling,
    "bounds": _run_bounds,
    "oracle-check": _run_oracle_check,
    "metric-build": _run_metric_build,
}


def run_config(config: dict, out: str, workers: int = 1,
               plot: bool = False) -> int:
    """Execute one resolved or raw config and write its output file."""
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    kind = config.get("kind")
    if kind is None:
        raise ConfigError("config field 'kind' is required")
    runner = RUNNERS.get(kind)
    if runner is None:
        raise ConfigError(
            f"unknown kind {kind!r}; expected one of {sorted(set(RUNNERS))}")
    text, plotter, code = runner(config, workers)
    _atomic_write(out, text)
    if plot:
        if plotter is None:
            print(f"note: kind {kind!r} has no figure; --plot ignored",
                  file=sys.stderr)
        else:
            base, _ = os.path.splitext(out)
            plotter(base + ".png")
    return code


# ------------------------------------------------------------------- CLI

_SUBCOMMAND_KINDS = {
    "rate": ("rate-single", "rate-vs-distance"),
    "region": ("rate-region",),
    "heatmap": ("heatmap",),
    "scaling": ("scaling",),
    "bounds": ("bounds",),
    "oracle-check": ("oracle-check",),
    "metric-build": ("metric-build",),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entroute",
        description="Entanglement-routing experiments on repeater lattices.")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, kinds in _SUBCOMMAND_KINDS.items():
        p = sub.add_parser(command, help=f"run a {' / '.join(kinds)} experiment")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", required=True, help="output file path")
        p.add_argument("--workers", type=int,
                       default=int(os.environ.get(WORKERS_ENV, "1")),
                       help=f"worker threads (default ${WORKERS_ENV} or 1)")
        p.add_argument("--plot", action="store_true",
                       help="also render a PNG figure next to the output")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--trials", type=int, help="override config trials")
        p.add_argument("--p", type=float, help="override: uniform direct link p")
        p.add_argument("--q", type=float, help="override internal success q")
        p.add_argument("--grid", help="override grid as WxH")
        p.add_argument("--metric", help="override metric: l1, l2, or table file")
        if command in ("rate", "scaling", "oracle-check"):
            p.add_argument("--rule", help="override routing rule")
        if command == "metric-build":
            p.add_argument("--mode", help="override build mode")
            p.add_argument("--max-sep", type=int, dest="max_sep",
                           help="override displacement table reach")
    return parser


def _config_from_args(args: argparse.Namespace) -> dict:
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {args.config!r}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {args.config!r} is not valid JSON: {e}") from e
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
    else:
        cfg = {}
    for field in ("seed", "trials", "q", "rule", "mode", "max_sep"):
        value = getattr(args, field, None)
        if value is not None:
            cfg[field] = value
    if args.p is not None:
        cfg["p"] = args.p
        cfg.pop("link", None)
    if args.grid is not None:
        try:
            w, h = (int(v) for v in args.grid.lower().split("x"))
        except ValueError:
            raise ConfigError("--grid expects WxH, e.g. 25x25") from None
        cfg["grid"] = [w, h]
        cfg.pop("topology", None)
    if args.metric is not None:
        if args.metric.endswith(".json"):
            cfg["metric"] = {"tables": args.metric}
        else:
            cfg["metric"] = args.metric
    allowed = _SUBCOMMAND_KINDS[args.command]
    kind = cfg.get("kind")
    if kind is None:
        if args.command == "rate":
            kind = "rate-vs-distance" if "placements" in cfg else "rate-single"
        else:
            kind = allowed[0]
        cfg["kind"] = kind
    elif kind not in allowed:
        raise ConfigError(
            f"config kind {kind!r} does not match subcommand {args.command!r}")
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        return run_config(cfg, args.out, workers=max(1, args.workers),
                          plot=args.plot)
    except (ConfigError, ValueError) as e:
        message = " ".join(str(e).split())
        print(f"error: {message}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
