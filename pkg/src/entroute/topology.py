"""Network topology and external-link success model.

Nodes live on integer coordinates. The canonical topology is the square
grid with nearest-neighbour edges, but arbitrary edge lists over
coordinate-labelled nodes are admitted (self-loops and duplicate edges
are rejected). Each edge represents a bundle of S parallel quantum
channels; an external link is up in a time slot when at least one
channel succeeds, and multiple successes still yield a single ebit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

Coord = tuple[int, int]


def link_success_prob(p0: float, channels: int) -> float:
    """Probability that at least one of `channels` parallel channels succeeds.

    p(e) = 1 - (1 - p0)^S.
    """
    if not 0.0 <= p0 <= 1.0:
        raise ValueError(f"p0 must lie in [0, 1], got {p0}")
    if channels < 1:
        raise ValueError(f"channel count must be >= 1, got {channels}")
    return 1.0 - (1.0 - p0) ** channels


def transmissivity(alpha: float, length: float) -> float:
    """Channel transmissivity eta = exp(-alpha * length) for a fibre span."""
    if alpha < 0.0:
        raise ValueError(f"attenuation coefficient must be >= 0, got {alpha}")
    if length < 0.0:
        raise ValueError(f"length must be >= 0, got {length}")
    return math.exp(-alpha * length)


def l1_distance(a: Coord, b: Coord) -> float:
    """Manhattan distance between two coordinates."""
    return float(abs(a[0] - b[0]) + abs(a[1] - b[1]))


def l2_distance(a: Coord, b: Coord) -> float:
    """Euclidean distance between two coordinates."""
    return math.hypot(a[0] - b[0], a[1] - b[1])


@dataclass(frozen=True)
class Topology:
    """Immutable node/edge structure with per-edge channel counts.

    coords[i] is the integer (x, y) position of node i. edges[k] is a
    (u, v) node-id pair with u < v. channels[k] is the number of
    parallel channels S(e) on edge k.
    """

    coords: tuple[Coord, ...]
    edges: tuple[tuple[int, int], ...]
    channels: tuple[int, ...]

    def __post_init__(self) -> None:
        n = len(self.coords)
        if len(self.channels) != len(self.edges):
            raise ValueError("channels must match edges one-to-one")
        for x, y in self.coords:
            if not (isinstance(x, int) and isinstance(y, int)):
                raise ValueError("node coordinates must be integer pairs")
        seen: set[tuple[int, int]] = set()
        norm = []
        for u, v in self.edges:
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) references unknown node")
            if u == v:
                raise ValueError(f"self-loop at node {u} not allowed")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            norm.append(key)
        for s in self.channels:
            if not isinstance(s, int) or s < 1:
                raise ValueError(f"channel count must be a positive int, got {s}")
        object.__setattr__(self, "edges", tuple(norm))

    @property
    def num_nodes(self) -> int:
        return len(self.coords)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def _coord_index(self) -> dict[Coord, int]:
        return {c: i for i, c in enumerate(self.coords)}

    def node_at(self, x: int, y: int) -> int:
        """Node id at coordinate (x, y); KeyError if absent."""
        return self._coord_index[(x, y)]

    @cached_property
    def edge_nodes(self) -> np.ndarray:
        """(E, 2) int32 array of edge endpoints."""
        arr = np.array(self.edges, dtype=np.int32).reshape(self.num_edges, 2)
        arr.setflags(write=False)
        return arr

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int32)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        deg.setflags(write=False)
        return deg

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.num_nodes else 0

    @cached_property
    def _adjacency(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-node incident (edge, neighbour) slots, sorted by neighbour id.

        Returns (incident_edges, neighbour_nodes), both (V, max_degree)
        int32 padded with -1. Slot order is ascending neighbour id; the
        routing tie-break rules rely on this being deterministic.
        """
        vmax = max(self.max_degree, 1)
        inc_e = np.full((self.num_nodes, vmax), -1, dtype=np.int32)
        inc_n = np.full((self.num_nodes, vmax), -1, dtype=np.int32)
        fill = np.zeros(self.num_nodes, dtype=np.int32)
        for ei, (u, v) in enumerate(self.edges):
            for a, b in ((u, v), (v, u)):
                inc_e[a, fill[a]] = ei
                inc_n[a, fill[a]] = b
                fill[a] += 1
        for u in range(self.num_nodes):
            k = fill[u]
            order = np.argsort(inc_n[u, :k], kind="stable")
            inc_n[u, :k] = inc_n[u, :k][order]
            inc_e[u, :k] = inc_e[u, :k][order]
        inc_e.setflags(write=False)
        inc_n.setflags(write=False)
        return inc_e, inc_n

    @property
    def incident_edges(self) -> np.ndarray:
        return self._adjacency[0]

    @property
    def neighbour_nodes(self) -> np.ndarray:
        return self._adjacency[1]

    def neighbours(self, u: int) -> list[int]:
        return [int(v) for v in self.neighbour_nodes[u] if v >= 0]

    def degree(self, u: int) -> int:
        return int(self.degrees[u])

    def to_json(self) -> str:
        doc = {
            "nodes": [
                {"id": i, "x": c[0], "y": c[1]} for i, c in enumerate(self.coords)
            ],
            "edges": [
                {"id": k, "u": u, "v": v, "S": s}
                for k, ((u, v), s) in enumerate(zip(self.edges, self.channels))
            ],
        }
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_json(text: str) -> "Topology":
        doc = json.loads(text)
        nodes = sorted(doc["nodes"], key=lambda r: r["id"])
        if [r["id"] for r in nodes] != list(range(len(nodes))):
            raise ValueError("node ids must be 0..V-1")
        coords = tuple((int(r["x"]), int(r["y"])) for r in nodes)
        edges_doc = sorted(doc["edges"], key=lambda r: r["id"])
        edges = tuple((int(r["u"]), int(r["v"])) for r in edges_doc)
        channels = tuple(int(r.get("S", 1)) for r in edges_doc)
        return Topology(coords=coords, edges=edges, channels=channels)


def build_grid(width: int, height: int, channels: int = 1) -> Topology:
    """Square-lattice grid with nearest-neighbour edges.

    Node ids are row-major: id = y * width + x, coordinate (x, y).
    Edge ids scan row-major with the +x edge before the +y edge at each
    node. A width x height grid has width*(height-1) + height*(width-1)
    edges.
    """
    if width < 1 or height < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {width}x{height}")
    coords = tuple((x, y) for y in range(height) for x in range(width))
    edges = []
    for y in range(height):
        for x in range(width):
            u = y * width + x
            if x + 1 < width:
                edges.append((u, u + 1))
            if y + 1 < height:
                edges.append((u, u + width))
    return Topology(
        coords=coords, edges=tuple(edges), channels=(channels,) * len(edges)
    )


@dataclass(frozen=True)
class LinkModel:
    """Resolves the per-edge external-link success probability p(e).

    Three parameterisations:
      direct   -- p given per edge (scalar broadcast or sequence);
      channel  -- per-channel success p0, combined over the edge's S channels;
      fibre    -- per-channel success from transmissivity exp(-alpha * L),
                  combined over S channels.
    """

    kind: str
    p: tuple[float, ...] | float | None = None
    p0: float | None = None
    alpha: float | None = None
    lengths: tuple[float, ...] | float | None = None

    @staticmethod
    def direct(p: float | Sequence[float]) -> "LinkModel":
        if np.isscalar(p):
            pv: tuple[float, ...] | float = float(p)  # type: ignore[arg-type]
        else:
            pv = tuple(float(x) for x in p)  # type: ignore[union-attr]
        return LinkModel(kind="direct", p=pv)

    @staticmethod
    def channel(p0: float) -> "LinkModel":
        return LinkModel(kind="channel", p0=float(p0))

    @staticmethod
    def fibre(alpha: float, lengths: float | Sequence[float]) -> "LinkModel":
        if np.isscalar(lengths):
            lv: tuple[float, ...] | float = float(lengths)  # type: ignore[arg-type]
        else:
            lv = tuple(float(x) for x in lengths)  # type: ignore[union-attr]
        return LinkModel(kind="fibre", alpha=float(alpha), lengths=lv)

    def edge_probs(self, topology: Topology) -> np.ndarray:
        """Per-edge up probability as a float64 array of length E."""
        e = topology.num_edges
        if self.kind == "direct":
            if self.p is None:
                raise ValueError("direct link model needs p")
            if np.isscalar(self.p):
                arr = np.full(e, float(self.p))  # type: ignore[arg-type]
            else:
                arr = np.asarray(self.p, dtype=np.float64)
                if arr.shape != (e,):
                    raise ValueError(
                        f"per-edge p has length {arr.shape}, topology has {e} edges"
                    )
        elif self.kind == "channel":
            if self.p0 is None:
                raise ValueError("channel link model needs p0")
            s = np.asarray(topology.channels, dtype=np.float64)
            arr = 1.0 - (1.0 - self.p0) ** s
        elif self.kind == "fibre":
            if self.alpha is None or self.lengths is None:
                raise ValueError("fibre link model needs alpha and lengths")
            if np.isscalar(self.lengths):
                ls = np.full(e, float(self.lengths))  # type: ignore[arg-type]
            else:
                ls = np.asarray(self.lengths, dtype=np.float64)
                if ls.shape != (e,):
                    raise ValueError(
                        f"per-edge lengths has length {ls.shape}, topology has {e} edges"
                    )
            p0 = np.exp(-self.alpha * ls)
            s = np.asarray(topology.channels, dtype=np.float64)
            arr = 1.0 - (1.0 - p0) ** s
        else:
            raise ValueError(f"unknown link model kind {self.kind!r}")
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValueError("edge probabilities must lie in [0, 1]")
        return np.ascontiguousarray(arr, dtype=np.float64)

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.p is not None:
            d["p"] = list(self.p) if isinstance(self.p, tuple) else self.p
        if self.p0 is not None:
            d["p0"] = self.p0
        if self.alpha is not None:
            d["alpha"] = self.alpha
        if self.lengths is not None:
            d["lengths"] = (
                list(self.lengths) if isinstance(self.lengths, tuple) else self.lengths
            )
        return d

    @staticmethod
    def from_dict(d: Mapping) -> "LinkModel":
        kind = d.get("kind")
        if kind == "direct" or (kind is None and "p" in d):
            return LinkModel.direct(d["p"])
        if kind == "channel" or (kind is None and "p0" in d):
            return LinkModel.channel(d["p0"])
        if kind == "fibre" or (kind is None and "alpha" in d):
            return LinkModel.fibre(d["alpha"], d["lengths"])
        raise ValueError(f"cannot interpret link model spec {dict(d)!r}")
