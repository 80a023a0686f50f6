"""Batched numba kernels for the per-slot routing rules.

Each kernel consumes a batch of sampled external-link states (one row
per time slot) plus any pre-drawn tie-break uniforms, and returns the
Rao-Blackwellised per-slot value: internal links are never sampled,
every candidate chain contributes its exact q^swaps success weight.

The pure-Python reference implementations live in routing_global /
routing_local; tests drive both on shared inputs and require agreement.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Local-rule tie-break uniforms consumed per node per slot. Layout
# (order matters, the reference implementation mirrors it):
#   0: choice of the neighbour heading toward one endpoint (v)
#   1: choice of the neighbour heading toward the other endpoint (w)
#   2: replacement choice for v when v == w
#   3: replacement choice for w when v == w
#   4: coin between the two replacement options at equal metric sum
COINS_PER_NODE = 5


@njit(cache=True, nogil=True)
def bfs_distance(up, inc_e, inc_n, deg, src, dst, dist, queue):
    """Shortest up-path hop count src->dst, or -1 if disconnected."""
    for i in range(dist.shape[0]):
        dist[i] = -1
    dist[src] = 0
    queue[0] = src
    qh = 0
    qt = 1
    while qh < qt:
        u = queue[qh]
        qh += 1
        if u == dst:
            break
        du = dist[u]
        for s in range(deg[u]):
            e = inc_e[u, s]
            if up[e] != 0:
                nb = inc_n[u, s]
                if dist[nb] < 0:
                    dist[nb] = du + 1
                    queue[qt] = nb
                    qt += 1
    return dist[dst]


@njit(cache=True, nogil=True)
def shortest_path_batch(up_mat, inc_e, inc_n, deg, src, dst):
    """Per-slot shortest-path hop counts (-1 when disconnected)."""
    n_trials = up_mat.shape[0]
    nv = inc_e.shape[0]
    out = np.empty(n_trials, dtype=np.int32)
    dist = np.empty(nv, dtype=np.int32)
    queue = np.empty(nv, dtype=np.int32)
    for b in range(n_trials):
        out[b] = bfs_distance(up_mat[b], inc_e, inc_n, deg, src, dst, dist, queue)
    return out


@njit(cache=True, nogil=True)
def greedy_batch(up_mat, inc_e, inc_n, deg, src, dst, q, max_paths):
    """Greedy global-knowledge routing, one row per slot.

    Repeatedly finds a shortest path over the surviving up-edges
    (predecessor tie-break: smallest node id at the previous depth),
    consumes its edges, and accumulates q^(k-1). Returns per-slot
    (score, first-path length, path count, path lengths).
    """
    n_trials = up_mat.shape[0]
    nv = inc_e.shape[0]
    ne = up_mat.shape[1]
    scores = np.zeros(n_trials)
    k_first = np.full(n_trials, -1, dtype=np.int32)
    n_paths = np.zeros(n_trials, dtype=np.int32)
    lengths = np.zeros((n_trials, max_paths), dtype=np.int32)
    dist = np.empty(nv, dtype=np.int32)
    queue = np.empty(nv, dtype=np.int32)
    up = np.empty(ne, dtype=np.uint8)
    for b in range(n_trials):
        for e in range(ne):
            up[e] = up_mat[b, e]
        npath = 0
        score = 0.0
        while True:
            k = bfs_distance(up, inc_e, inc_n, deg, src, dst, dist, queue)
            if k < 0:
                break
            # Walk back dst -> src, always taking the smallest-id
            # predecessor at the previous depth; consume path edges.
            node = dst
            while node != src:
                d = dist[node]
                for s in range(deg[node]):
                    e = inc_e[node, s]
                    if up[e] != 0 and dist[inc_n[node, s]] == d - 1:
                        up[e] = 0
                        node = inc_n[node, s]
                        break
            if npath == 0:
                k_first[b] = k
            score += q ** (k - 1)
            lengths[b, npath] = k
            npath += 1
            if npath >= max_paths:
                break
        scores[b] = score
        n_paths[b] = npath
    return scores, k_first, n_paths, lengths


@njit(cache=True, nogil=True)
def _decide_node(u, inc_e, inc_n, deg, up, d_a, d_b, tol, c0, c1, c2, c3, c4):
    """Local pairing rule at one node; returns up to two memory pairs.

    Candidates are the node's up-neighbours. v minimises the distance
    to one endpoint, w the distance to the other; at v == w the rule
    evaluates both single substitutions (next-best v, or next-best w)
    and keeps the pair with the smaller metric sum. Exact metric ties
    are resolved uniformly with the supplied coins. With four up-links
    the two leftover memories are paired as well.

    Returns (e1, e2, e3, e4): pair one and (or -1, -1) pair two.
    """
    du = deg[u]
    nup = 0
    for s in range(du):
        if up[inc_e[u, s]] != 0:
            nup += 1
    if nup < 2:
        return (-1, -1, -1, -1)

    # v: closest up-neighbour toward the first endpoint.
    dmin_a = 1e300
    for s in range(du):
        if up[inc_e[u, s]] != 0:
            d = d_a[inc_n[u, s]]
            if d < dmin_a:
                dmin_a = d
    nta = 0
    for s in range(du):
        if up[inc_e[u, s]] != 0 and d_a[inc_n[u, s]] <= dmin_a + tol:
            nta += 1
    pick = int(c0 * nta)
    if pick >= nta:
        pick = nta - 1
    v_slot = -1
    i = 0
    for s in range(du):
        if up[inc_e[u, s]] != 0 and d_a[inc_n[u, s]] <= dmin_a + tol:
            if i == pick:
                v_slot = s
                break
            i += 1

    # w: closest up-neighbour toward the second endpoint.
    dmin_b = 1e300
    for s in range(du):
        if up[inc_e[u, s]] != 0:
            d = d_b[inc_n[u, s]]
            if d < dmin_b:
                dmin_b = d
    ntb = 0
    for s in range(du):
        if up[inc_e[u, s]] != 0 and d_b[inc_n[u, s]] <= dmin_b + tol:
            ntb += 1
    pick = int(c1 * ntb)
    if pick >= ntb:
        pick = ntb - 1
    w_slot = -1
    i = 0
    for s in range(du):
        if up[inc_e[u, s]] != 0 and d_b[inc_n[u, s]] <= dmin_b + tol:
            if i == pick:
                w_slot = s
                break
            i += 1

    if v_slot == w_slot:
        # Substitute either v or w with its runner-up; keep the
        # combination with the smaller d_a + d_b, coin on a tie.
        dmin2_a = 1e300
        for s in range(du):
            if s != v_slot and up[inc_e[u, s]] != 0:
                d = d_a[inc_n[u, s]]
                if d < dmin2_a:
                    dmin2_a = d
        nta2 = 0
        for s in range(du):
            if s != v_slot and up[inc_e[u, s]] != 0 and d_a[inc_n[u, s]] <= dmin2_a + tol:
                nta2 += 1
        pick = int(c2 * nta2)
        if pick >= nta2:
            pick = nta2 - 1
        v_alt = -1
        i = 0
        for s in range(du):
            if s != v_slot and up[inc_e[u, s]] != 0 and d_a[inc_n[u, s]] <= dmin2_a + tol:
                if i == pick:
                    v_alt = s
                    break
                i += 1

        dmin2_b = 1e300
        for s in range(du):
            if s != w_slot and up[inc_e[u, s]] != 0:
                d = d_b[inc_n[u, s]]
                if d < dmin2_b:
                    dmin2_b = d
        ntb2 = 0
        for s in range(du):
            if s != w_slot and up[inc_e[u, s]] != 0 and d_b[inc_n[u, s]] <= dmin2_b + tol:
                ntb2 += 1
        pick = int(c3 * ntb2)
        if pick >= ntb2:
            pick = ntb2 - 1
        w_alt = -1
        i = 0
        for s in range(du):
            if s != w_slot and up[inc_e[u, s]] != 0 and d_b[inc_n[u, s]] <= dmin2_b + tol:
                if i == pick:
                    w_alt = s
                    break
                i += 1

        sum_a = d_a[inc_n[u, v_alt]] + d_b[inc_n[u, w_slot]]
        sum_b = d_a[inc_n[u, v_slot]] + d_b[inc_n[u, w_alt]]
        if sum_a < sum_b - tol:
            v_slot = v_alt
        elif sum_b < sum_a - tol:
            w_slot = w_alt
        elif c4 < 0.5:
            v_slot = v_alt
        else:
            w_slot = w_alt

    e1 = int(inc_e[u, v_slot])
    e2 = int(inc_e[u, w_slot])
    e3 = -1
    e4 = -1
    if nup == 4:
        # All four links up: the leftover two memories swap as well.
        first = -1
        for s in range(du):
            if s != v_slot and s != w_slot and up[inc_e[u, s]] != 0:
                if first < 0:
                    first = s
                else:
                    e3 = int(inc_e[u, first])
                    e4 = int(inc_e[u, s])
    return (e1, e2, e3, e4)


@njit(cache=True, nogil=True)
def _link_pair(link, edge_nodes, u, e1, e2):
    """Record the swap pairing (e1, e2) made at node u."""
    s1 = 0 if edge_nodes[e1, 0] == u else 1
    s2 = 0 if edge_nodes[e2, 0] == u else 1
    link[2 * e1 + s1] = e2
    link[2 * e2 + s2] = e1


@njit(cache=True, nogil=True)
def _walk_chain(link, edge_nodes, visited, e_start, s_free, chain_nodes):
    """Follow a chain from a free memory end.

    Marks edges visited, fills chain_nodes with the node sequence, and
    returns (terminal_a, terminal_b, swaps, n_nodes).
    """
    t1 = edge_nodes[e_start, s_free]
    chain_nodes[0] = t1
    n_nodes = 1
    cur = e_start
    enter = s_free
    swaps = 0
    while True:
        visited[cur] = 1
        exit_side = 1 - enter
        node = edge_nodes[cur, exit_side]
        chain_nodes[n_nodes] = node
        n_nodes += 1
        nxt = link[2 * cur + exit_side]
        if nxt < 0:
            return (t1, node, swaps, n_nodes)
        swaps += 1
        enter = 0 if edge_nodes[nxt, 0] == node else 1
        cur = nxt


@njit(cache=True, nogil=True)
def local_batch(up_mat, coins, inc_e, inc_n, deg, edge_nodes,
                d_a, d_b, tol, passive, src, dst, q):
    """Local-rule per-slot values for one flow (src, dst)."""
    n_trials = up_mat.shape[0]
    nv = inc_e.shape[0]
    ne = up_mat.shape[1]
    scores = np.zeros(n_trials)
    link = np.empty(2 * ne, dtype=np.int32)
    visited = np.empty(ne, dtype=np.uint8)
    chain_nodes = np.empty(nv + 1, dtype=np.int32)
    for b in range(n_trials):
        up = up_mat[b]
        for i in range(2 * ne):
            link[i] = -1
        for u in range(nv):
            if passive[u] != 0:
                continue
            e1, e2, e3, e4 = _decide_node(
                u, inc_e, inc_n, deg, up, d_a, d_b, tol,
                coins[b, u, 0], coins[b, u, 1], coins[b, u, 2],
                coins[b, u, 3], coins[b, u, 4])
            if e1 >= 0:
                _link_pair(link, edge_nodes, u, e1, e2)
            if e3 >= 0:
                _link_pair(link, edge_nodes, u, e3, e4)
        for e in range(ne):
            visited[e] = 0
        score = 0.0
        for e in range(ne):
            if up[e] == 0 or visited[e] != 0:
                continue
            for side in range(2):
                if link[2 * e + side] < 0:
                    t1, t2, swaps, _ = _walk_chain(
                        link, edge_nodes, visited, e, side, chain_nodes)
                    if (t1 == src and t2 == dst) or (t1 == dst and t2 == src):
                        score += q ** swaps
                    break
        scores[b] = score
    return scores


@njit(cache=True, nogil=True)
def local_usage_batch(up_mat, coins, inc_e, inc_n, deg, edge_nodes,
                      d_a, d_b, tol, passive, src, dst, q, usage_out):
    """Local rule with per-node involvement accumulation.

    usage_out[v] accumulates, over slots, the probability that v lies
    on at least one delivered end-to-end ebit this slot: per slot
    1 - prod(1 - q^swaps) over the distinct terminal chains through v.
    """
    n_trials = up_mat.shape[0]
    nv = inc_e.shape[0]
    ne = up_mat.shape[1]
    scores = np.zeros(n_trials)
    link = np.empty(2 * ne, dtype=np.int32)
    visited = np.empty(ne, dtype=np.uint8)
    chain_nodes = np.empty(nv + 1, dtype=np.int32)
    p_not = np.ones(nv)
    touched = np.empty(nv, dtype=np.int32)
    for b in range(n_trials):
        up = up_mat[b]
        for i in range(2 * ne):
            link[i] = -1
        for u in range(nv):
            if passive[u] != 0:
                continue
            e1, e2, e3, e4 = _decide_node(
                u, inc_e, inc_n, deg, up, d_a, d_b, tol,
                coins[b, u, 0], coins[b, u, 1], coins[b, u, 2],
                coins[b, u, 3], coins[b, u, 4])
            if e1 >= 0:
                _link_pair(link, edge_nodes, u, e1, e2)
            if e3 >= 0:
                _link_pair(link, edge_nodes, u, e3, e4)
        for e in range(ne):
            visited[e] = 0
        score = 0.0
        n_touched = 0
        for e in range(ne):
            if up[e] == 0 or visited[e] != 0:
                continue
            for side in range(2):
                if link[2 * e + side] < 0:
                    t1, t2, swaps, n_nodes = _walk_chain(
                        link, edge_nodes, visited, e, side, chain_nodes)
                    if (t1 == src and t2 == dst) or (t1 == dst and t2 == src):
                        s = q ** swaps
                        score += s
                        for i in range(n_nodes):
                            node = chain_nodes[i]
                            if p_not[node] == 1.0:
                                touched[n_touched] = node
                                n_touched += 1
                            p_not[node] *= 1.0 - s
                    break
        for i in range(n_touched):
            node = touched[i]
            usage_out[node] += 1.0 - p_not[node]
            p_not[node] = 1.0
        scores[b] = score
    return scores


@njit(cache=True, nogil=True)
def two_flow_batch(up_mat, coins, slot_flow, region, passive_f1, passive_f2,
                   inc_e, inc_n, deg, edge_nodes,
                   da1, db1, tol1, da2, db2, tol2,
                   a1, b1, a2, b2, q, credit_both):
    """Two concurrent flows sharing the lattice.

    slot_flow[b] selects which flow's rule every node runs that slot
    (1 or 2); slot_flow[b] == 0 means spatial division, where region[u]
    assigns each node its flow. The matching passive mask is applied.
    A chain credits flow i when its terminals are exactly that flow's
    endpoint pair; with credit_both == 0 only the active slot flow may
    score (time-shared single-flow operation).
    """
    n_trials = up_mat.shape[0]
    nv = inc_e.shape[0]
    ne = up_mat.shape[1]
    scores = np.zeros((n_trials, 2))
    link = np.empty(2 * ne, dtype=np.int32)
    visited = np.empty(ne, dtype=np.uint8)
    chain_nodes = np.empty(nv + 1, dtype=np.int32)
    for b in range(n_trials):
        up = up_mat[b]
        f_slot = slot_flow[b]
        for i in range(2 * ne):
            link[i] = -1
        for u in range(nv):
            f = f_slot if f_slot != 0 else region[u]
            if f == 1:
                if passive_f1[u] != 0:
                    continue
            else:
                if passive_f2[u] != 0:
                    continue
            if f == 1:
                e1, e2, e3, e4 = _decide_node(
                    u, inc_e, inc_n, deg, up, da1, db1, tol1,
                    coins[b, u, 0], coins[b, u, 1], coins[b, u, 2],
                    coins[b, u, 3], coins[b, u, 4])
            else:
                e1, e2, e3, e4 = _decide_node(
                    u, inc_e, inc_n, deg, up, da2, db2, tol2,
                    coins[b, u, 0], coins[b, u, 1], coins[b, u, 2],
                    coins[b, u, 3], coins[b, u, 4])
            if e1 >= 0:
                _link_pair(link, edge_nodes, u, e1, e2)
            if e3 >= 0:
                _link_pair(link, edge_nodes, u, e3, e4)
        credit1 = credit_both != 0 or f_slot != 2
        credit2 = credit_both != 0 or f_slot != 1
        for e in range(ne):
            visited[e] = 0
        s1 = 0.0
        s2 = 0.0
        for e in range(ne):
            if up[e] == 0 or visited[e] != 0:
                continue
            for side in range(2):
                if link[2 * e + side] < 0:
                    t1, t2, swaps, _ = _walk_chain(
                        link, edge_nodes, visited, e, side, chain_nodes)
                    if credit1 and ((t1 == a1 and t2 == b1) or (t1 == b1 and t2 == a1)):
                        s1 += q ** swaps
                    elif credit2 and ((t1 == a2 and t2 == b2) or (t1 == b2 and t2 == a2)):
                        s2 += q ** swaps
                    break
        scores[b, 0] = s1
        scores[b, 1] = s2
    return scores
