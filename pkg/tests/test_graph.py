import numpy as np
import pytest

from oracles import configurations, matching, work_update
from wfbench.errors import (
    EnumerationOverflowError,
    GraphChecksumError,
    GraphFormatError,
    GraphTruncatedError,
    GraphVersionError,
    UnsupportedSymmetryError,
)
from wfbench.graph import (
    BuildOptions,
    SymmetryGroup,
    build_graph,
    canonicalize_node,
    edge_weight,
    recompute_edge,
    verify_edges,
)
from wfbench.graphfile import deserialize_graph, load_graph, save_graph, serialize_graph
from wfbench.metric import MetricSpace, make_circle
from wfbench.workfn import WFContext


def bfs_oracle(k, m, seeds, self_loops=True):
    """Reachable normalized work functions, by dictionary BFS from the given seeds."""
    cfgs = configurations(k, m)

    def norm(w):
        lo = min(w.values())
        return tuple(w[x] - lo for x in cfgs)

    order, seen, edges = [], {}, []
    for s in seeds:
        key = norm({x: matching(m, s, x) for x in cfgs})
        if key not in seen:
            seen[key] = len(order)
            order.append(key)
    head = 0
    while head < len(order):
        w = dict(zip(cfgs, order[head]))
        for r in range(m):
            t = work_update(k, m, w, r)
            grad = max(t[x] - w[x] for x in cfgs)
            dopt = min(t.values())
            key = norm(t)
            if key not in seen:
                seen[key] = len(order)
                order.append(key)
            if self_loops or seen[key] != head:
                edges.append((head, r, seen[key], grad, dopt))
        head += 1
    return order, edges


def graph_edges(g):
    return [g.edge(e) for e in range(g.num_edges)]


def test_two_point_single_server_graph():
    g = build_graph(WFContext(make_circle(2), 1), BuildOptions(start=(0,)))
    assert (g.num_nodes, g.num_edges) == (2, 4)
    g_all = build_graph(WFContext(make_circle(2), 1))
    assert (g_all.num_nodes, g_all.num_edges) == (2, 4)
    g_nl = build_graph(WFContext(make_circle(2), 1), BuildOptions(self_loops=False))
    assert g_nl.num_edges == 2


@pytest.mark.parametrize("k,m", [(2, 4), (2, 5), (1, 6), (3, 4)])
@pytest.mark.parametrize("all_seeds", [True, False])
def test_build_matches_bfs_oracle(k, m, all_seeds):
    ctx = WFContext(make_circle(m), k)
    seeds = configurations(k, m) if all_seeds else [(0,) * k]
    opts = BuildOptions(start="all" if all_seeds else (0,) * k)
    g = build_graph(ctx, opts)
    nodes, edges = bfs_oracle(k, m, seeds)
    assert [tuple(int(x) for x in row) for row in g.nodes] == nodes
    assert graph_edges(g) == edges


def test_without_self_loops_matches_oracle():
    ctx = WFContext(make_circle(5), 2)
    g = build_graph(ctx, BuildOptions(self_loops=False))
    _, edges = bfs_oracle(2, 5, configurations(2, 5), self_loops=False)
    assert graph_edges(g) == edges


def test_k3m6_shape_and_closure(g36):
    assert (g36.num_nodes, g36.num_edges) == (350, 2100)
    # one outgoing edge per request, including self-loops
    assert np.array_equal(np.bincount(g36.edge_u), np.full(350, 6))
    assert np.all(g36.nodes.min(axis=1) == 0)
    assert g36.nodes.max() <= g36.ctx.max_matching
    assert verify_edges(g36) == []
    assert len({row.tobytes() for row in g36.nodes}) == 350


def test_build_is_deterministic(g36):
    again = build_graph(WFContext(make_circle(6), 3))
    assert again.same_as(g36)
    assert serialize_graph(again) == serialize_graph(g36)


def test_edge_weight_examples():
    assert edge_weight(3, 0, 4) == 3
    assert edge_weight(5, 1, 4) == 0
    assert edge_weight(0, 0, 7) == 0


def test_recompute_edge(g36):
    for e in range(0, g36.num_edges, 97):
        u, r, v, grad, dopt = g36.edge(e)
        vec, g2, d2 = recompute_edge(g36.ctx, g36, u, r)
        assert (g2, d2) == (grad, dopt)
        assert np.array_equal(vec, g36.nodes[v])


def test_symmetry_orbits_and_canonical_form():
    ctx = WFContext(make_circle(4), 2)
    group = SymmetryGroup(ctx)
    g = build_graph(ctx)
    for row in g.nodes:
        orbit = {img.tobytes() for img in group.orbit(row)}
        assert (2 * ctx.m) % len(orbit) == 0
        rot = row[group.perms[1]]
        assert np.array_equal(canonicalize_node(ctx, rot), canonicalize_node(ctx, row))
    flat = np.zeros(ctx.count, dtype=np.int32)
    assert np.array_equal(group.canonicalize(flat), flat)
    with pytest.raises(UnsupportedSymmetryError):
        SymmetryGroup(WFContext(MetricSpace(np.array([[0, 1], [1, 0]])), 1))


def test_symmetry_reduced_graph_is_the_orbit_quotient(g36):
    ctx = g36.ctx
    gs = build_graph(ctx, BuildOptions(symmetry=True))
    group = SymmetryGroup(ctx)
    classes = {group.canonicalize(row).tobytes() for row in g36.nodes}
    assert gs.num_nodes == len(classes)
    assert gs.num_edges == gs.num_nodes * ctx.m
    assert verify_edges(gs) == []


def test_node_cap():
    with pytest.raises(EnumerationOverflowError):
        build_graph(WFContext(make_circle(6), 3), BuildOptions(node_cap=100))


def test_bloom_mode_gives_lower_bounds(g36):
    ctx = g36.ctx
    big = build_graph(ctx, BuildOptions(probabilistic=True))
    assert (big.num_nodes, big.num_edges) == (g36.num_nodes, g36.num_edges)
    tiny = build_graph(ctx, BuildOptions(probabilistic=True, bloom_bits=512, bloom_hashes=2))
    assert tiny.num_nodes <= g36.num_nodes and tiny.num_edges <= g36.num_edges
    assert tiny.probabilistic


def test_save_load_round_trip(tmp_path, g36):
    path = tmp_path / "g.wfg"
    digest = save_graph(g36, path)
    back = load_graph(path)
    assert back.same_as(g36)
    assert back.checksum == digest
    assert back.space == g36.space and back.start == g36.start
    assert serialize_graph(back) == path.read_bytes()


def test_round_trip_keeps_flags_and_explicit_metrics(tmp_path):
    space = MetricSpace(np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]]))
    g = build_graph(WFContext(space, 2), BuildOptions(start=(0, 2), self_loops=False))
    back = deserialize_graph(serialize_graph(g))
    assert back.same_as(g) and back.seed_config == (0, 2) and not back.self_loops


def test_load_errors(tmp_path, g36):
    data = bytearray(serialize_graph(g36))
    bad = bytearray(data)
    bad[-20] ^= 0xFF
    with pytest.raises(GraphChecksumError):
        deserialize_graph(bytes(bad))
    future = bytearray(data)
    future[4] = 99
    with pytest.raises(GraphVersionError):
        deserialize_graph(bytes(future))
    with pytest.raises(GraphTruncatedError):
        deserialize_graph(bytes(data[:-100]))
    with pytest.raises(GraphFormatError):
        deserialize_graph(b"NOPE" + bytes(data[4:]))
    for err in (GraphChecksumError, GraphVersionError, GraphTruncatedError):
        assert issubclass(err, GraphFormatError)
