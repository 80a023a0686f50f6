import json
import math

import numpy as np
import pytest

from entroute.topology import (
    LinkModel,
    Topology,
    build_grid,
    l1_distance,
    l2_distance,
    link_success_prob,
    transmissivity,
)


def test_link_success_prob_values():
    assert link_success_prob(0.5, 2) == 0.75
    assert link_success_prob(0.3, 1) == pytest.approx(0.3, rel=1e-15)
    assert link_success_prob(0.0, 5) == 0.0
    assert link_success_prob(1.0, 3) == 1.0


def test_link_success_prob_validation():
    with pytest.raises(ValueError):
        link_success_prob(1.2, 1)
    with pytest.raises(ValueError):
        link_success_prob(0.5, 0)


def test_transmissivity():
    assert transmissivity(0.046, 50.0) == pytest.approx(math.exp(-2.3), rel=1e-15)
    assert transmissivity(0.0, 10.0) == 1.0


def test_distances():
    assert l2_distance((0, 0), (3, 4)) == 5.0
    assert l1_distance((0, 0), (3, 4)) == 7.0
    assert l1_distance((2, 2), (2, 2)) == 0.0


def test_grid_2x2():
    g = build_grid(2, 2)
    assert g.num_nodes == 4
    assert g.num_edges == 4
    assert all(int(d) == 2 for d in g.degrees)


def test_grid_row_major_ids():
    g = build_grid(3, 2)
    for y in range(2):
        for x in range(3):
            assert g.node_at(x, y) == y * 3 + x
    with pytest.raises(KeyError):
        g.node_at(5, 5)


def test_grid_edge_count_large():
    g = build_grid(100, 100)
    assert g.num_edges == 19800
    assert g.num_nodes == 10000


def test_path_grid():
    g = build_grid(1, 5)
    assert g.num_edges == 4
    assert all(int(d) <= 2 for d in g.degrees)


def test_adjacency_sorted_by_neighbour():
    g = build_grid(4, 4)
    for u in range(g.num_nodes):
        d = int(g.degrees[u])
        nbrs = [int(v) for v in g.neighbour_nodes[u, :d]]
        assert nbrs == sorted(nbrs)
        for slot in range(d):
            e = int(g.incident_edges[u, slot])
            assert u in g.edges[e]
            other = g.edges[e][0] + g.edges[e][1] - u
            assert other == nbrs[slot]


def test_edge_nodes_matches_edges():
    g = build_grid(3, 3)
    assert g.edge_nodes.shape == (g.num_edges, 2)
    for e, (u, v) in enumerate(g.edges):
        assert tuple(g.edge_nodes[e]) == (u, v)
        assert u < v


def test_topology_validation():
    coords = ((0, 0), (1, 0))
    with pytest.raises(ValueError):
        Topology(coords=coords, edges=((0, 0),), channels=(1,))
    with pytest.raises(ValueError):
        Topology(coords=coords, edges=((0, 1), (1, 0)), channels=(1, 1))
    with pytest.raises(ValueError):
        Topology(coords=coords, edges=((0, 2),), channels=(1,))
    with pytest.raises(ValueError):
        Topology(coords=coords, edges=((0, 1),), channels=(0,))


def test_json_round_trip():
    g = build_grid(3, 2, channels=2)
    doc = g.to_json()
    parsed = json.loads(doc)
    assert {n["id"] for n in parsed["nodes"]} == set(range(6))
    assert all(e["S"] == 2 for e in parsed["edges"])
    g2 = Topology.from_json(doc)
    assert g2 == g


def test_link_model_direct():
    g = build_grid(2, 2)
    probs = LinkModel.direct(0.6).edge_probs(g)
    assert probs.shape == (4,)
    assert np.all(probs == 0.6)
    per_edge = LinkModel.direct([0.1, 0.2, 0.3, 0.4]).edge_probs(g)
    assert list(per_edge) == [0.1, 0.2, 0.3, 0.4]
    with pytest.raises(ValueError):
        LinkModel.direct([0.1, 0.2]).edge_probs(g)
    with pytest.raises(ValueError):
        LinkModel.direct(1.5).edge_probs(g)


def test_link_model_channel():
    g = build_grid(2, 2, channels=2)
    probs = LinkModel.channel(0.5).edge_probs(g)
    assert np.allclose(probs, 0.75)


def test_link_model_fibre():
    g = build_grid(2, 1)
    probs = LinkModel.fibre(0.046, 50.0).edge_probs(g)
    assert probs[0] == pytest.approx(math.exp(-2.3), rel=1e-15)


def test_link_model_dict_round_trip():
    for model in (LinkModel.direct(0.4), LinkModel.channel(0.2),
                  LinkModel.fibre(0.05, 10.0),
                  LinkModel.direct([0.1, 0.2, 0.3, 0.4])):
        again = LinkModel.from_dict(model.to_dict())
        assert again == model
