"""Breadth-first enumeration of the work-function graph.

Nodes are the reachable normalized work functions; every (node, request) pair
produces one edge annotated with the extended cost and the OPT increase of the
transition, both measured on the node's normalized vector.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .bloom import BloomFilter
from .errors import EnumerationOverflowError, UnsupportedSymmetryError
from .workfn import WFContext, initial_work_function, update_many

logger = logging.getLogger(__name__)

DEFAULT_NODE_CAP = 10**8
ALL_STARTS = "all"


@dataclass
class BuildOptions:
    """Knobs for :func:`build_graph`.

    ``start`` is either a configuration (BFS seeded with the normalized
    work function of that start) or ``"all"``: one seed per configuration, in
    dense-index order.
    """

    start: str | tuple[int, ...] = ALL_STARTS
    self_loops: bool = True
    symmetry: bool = False
    probabilistic: bool = False
    bloom_bits: int = 1 << 27
    bloom_hashes: int = 7
    node_cap: int = DEFAULT_NODE_CAP
    batch: int = 256


@dataclass(eq=False)
class WorkFunctionGraph:
    """Materialized graph. ``nodes[i]`` is the normalized vector of node ``i``.

    Edges are parallel arrays sorted by source node, then request.
    """

    ctx: WFContext
    nodes: np.ndarray
    edge_u: np.ndarray
    edge_r: np.ndarray
    edge_v: np.ndarray
    grad: np.ndarray
    dopt: np.ndarray
    start: int = 0
    self_loops: bool = True
    symmetry: bool = False
    probabilistic: bool = False
    seed_config: tuple[int, ...] | None = None  # None means every configuration seeded
    checksum: str | None = None  # hex digest of the file this graph was saved to / loaded from

    @property
    def space(self):
        return self.ctx.space

    @property
    def k(self) -> int:
        return self.ctx.k

    @property
    def m(self) -> int:
        return self.ctx.m

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_u.shape[0]

    def __repr__(self):
        return (
            f"WorkFunctionGraph(k={self.k}, m={self.m}, nodes={self.num_nodes}, "
            f"edges={self.num_edges})"
        )

    def edge(self, e: int) -> tuple[int, int, int, int, int]:
        return (
            int(self.edge_u[e]),
            int(self.edge_r[e]),
            int(self.edge_v[e]),
            int(self.grad[e]),
            int(self.dopt[e]),
        )

    @cached_property
    def out_offsets(self) -> np.ndarray:
        """CSR offsets: edges of node ``u`` are ``offsets[u]:offsets[u+1]``."""
        counts = np.bincount(self.edge_u, minlength=self.num_nodes)
        offsets = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return offsets

    def weights(self, c) -> np.ndarray:
        """Edge weights ``grad - (c+1) * dopt`` (``c`` int, or exact for Fractions via floats)."""
        return edge_weight(self.grad, self.dopt, c)

    def same_as(self, other: "WorkFunctionGraph") -> bool:
        return (
            self.space == other.space
            and self.k == other.k
            and self.start == other.start
            and self.self_loops == other.self_loops
            and self.symmetry == other.symmetry
            and self.probabilistic == other.probabilistic
            and self.seed_config == other.seed_config
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.edge_u, other.edge_u)
            and np.array_equal(self.edge_r, other.edge_r)
            and np.array_equal(self.edge_v, other.edge_v)
            and np.array_equal(self.grad, other.grad)
            and np.array_equal(self.dopt, other.dopt)
        )


def edge_weight(grad, dopt, c):
    """Required potential increase on an edge: ``grad - (c+1) * dopt``."""
    return grad - (c + 1) * dopt


class SymmetryGroup:
    """The 2m rotations and reflections of a circle acting on configuration indices."""

    def __init__(self, ctx: WFContext):
        if not ctx.space.is_circle():
            raise UnsupportedSymmetryError(
                "symmetry reduction needs a circle metric, got an explicit matrix"
            )
        m = ctx.m
        configs = ctx.indexer.configs
        perms = []
        for reflect in (False, True):
            for s in range(m):
                mapped = ((-configs if reflect else configs) + s) % m
                perms.append(ctx.indexer.indices_of(mapped))
        self.perms = np.stack(perms)

    def orbit(self, w: np.ndarray) -> np.ndarray:
        """All 2m images of ``w`` (rows may repeat)."""
        return np.asarray(w)[self.perms]

    def canonicalize(self, w: np.ndarray) -> np.ndarray:
        images = self.orbit(w)
        order = np.lexsort(images.T[::-1])
        return images[order[0]]


def canonicalize_node(ctx: WFContext, wf: np.ndarray) -> np.ndarray:
    """Lexicographically least image of ``wf`` under the circle's dihedral group."""
    return SymmetryGroup(ctx).canonicalize(wf)


class _ExactVisited:
    def __init__(self):
        self._ids: dict[bytes, int] = {}

    def lookup_or_add(self, key: bytes, new_id: int) -> int | None:
        """Existing id, or None after registering ``new_id``."""
        got = self._ids.setdefault(key, new_id)
        return None if got == new_id else got


class _BloomVisited:
    """Bloom pre-filter plus a digest table for resolving edge targets.

    A Bloom false positive drops a genuinely new node; its incoming edge is
    dropped too (returned id -1), so counts become lower bounds.
    """

    def __init__(self, bits: int, hashes: int):
        self.bloom = BloomFilter(bits, hashes)
        self._ids: dict[bytes, int] = {}
        self.false_positives = 0

    def lookup_or_add(self, key: bytes, new_id: int) -> int | None:
        digest = hashlib.blake2b(key, digest_size=16).digest()
        if self.bloom.add(key):
            found = self._ids.get(digest)
            if found is None:
                self.false_positives += 1
                return -1
            return found
        self._ids[digest] = new_id
        return None


def build_graph(
    ctx: WFContext,
    options: BuildOptions | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> WorkFunctionGraph:
    """Enumerate every normalized work function reachable from the seeds.

    Node ids follow FIFO discovery order with requests scanned ``0..m-1``.
    """
    opts = options or BuildOptions()
    group = SymmetryGroup(ctx) if opts.symmetry else None
    visited = (
        _BloomVisited(opts.bloom_bits, opts.bloom_hashes) if opts.probabilistic else _ExactVisited()
    )

    def canon(w):
        return group.canonicalize(w) if group is not None else w

    if isinstance(opts.start, str):
        if opts.start != ALL_STARTS:
            raise ValueError(f"start must be a configuration or {ALL_STARTS!r}")
        seeds = ctx.matching
        seed_config = None
    else:
        seed_config = ctx.indexer.canonical(opts.start)
        seeds = initial_work_function(ctx, seed_config)[None, :]

    nodes: list[np.ndarray] = []
    for w in seeds:
        w = canon((w - w.min()).astype(np.int32))
        if visited.lookup_or_add(w.tobytes(), len(nodes)) is None:
            nodes.append(w)
    start = 0

    eu, er, ev, eg, ed = [], [], [], [], []
    head = 0
    m = ctx.m
    while head < len(nodes):
        block = np.stack(nodes[head : head + opts.batch])
        succ = np.empty((m,) + block.shape, dtype=np.int64)
        for r in range(m):
            succ[r] = update_many(ctx, block, r)
        grads = (succ - block[None, :, :]).max(axis=2)
        dopts = succ.min(axis=2)  # block rows are normalized, so min w = 0
        succ -= dopts[:, :, None]
        for b in range(block.shape[0]):
            u = head + b
            for r in range(m):
                w = canon(succ[r, b].astype(np.int32))
                v = visited.lookup_or_add(w.tobytes(), len(nodes))
                if v is None:
                    v = len(nodes)
                    nodes.append(w)
                    if len(nodes) > opts.node_cap:
                        raise EnumerationOverflowError(opts.node_cap)
                elif v < 0:
                    continue
                if v == u and not opts.self_loops:
                    continue
                eu.append(u)
                er.append(r)
                ev.append(v)
                eg.append(grads[r, b])
                ed.append(dopts[r, b])
        head += block.shape[0]
        if progress is not None:
            progress(head, len(nodes))
    if opts.probabilistic:
        logger.info(
            "probabilistic visited set dropped %d nodes; counts are lower bounds",
            visited.false_positives,
        )

    return WorkFunctionGraph(
        ctx=ctx,
        nodes=np.stack(nodes) if nodes else np.zeros((0, ctx.count), dtype=np.int32),
        edge_u=np.asarray(eu, dtype=np.int64),
        edge_r=np.asarray(er, dtype=np.int64),
        edge_v=np.asarray(ev, dtype=np.int64),
        grad=np.asarray(eg, dtype=np.int64),
        dopt=np.asarray(ed, dtype=np.int64),
        start=start,
        self_loops=opts.self_loops,
        symmetry=opts.symmetry,
        probabilistic=opts.probabilistic,
        seed_config=seed_config,
    )


def recompute_edge(ctx: WFContext, graph: WorkFunctionGraph, u: int, r: int):
    """Fresh ``(v_vector, grad, dopt)`` for the transition ``(u, r)``."""
    w = graph.nodes[u].astype(np.int64)
    nxt = update_many(ctx, w[None, :], r)[0]
    grad = int((nxt - w).max())
    dopt = int(nxt.min() - w.min())
    v = (nxt - nxt.min()).astype(np.int32)
    if graph.symmetry:
        v = canonicalize_node(ctx, v)
    return v, grad, dopt


def verify_edges(graph: WorkFunctionGraph, stop_at_first: bool = True) -> list[tuple[int, str]]:
    """Re-derive every edge with the work-function operators.

    Returns ``(edge index, description)`` for each mismatch.
    """
    ctx = graph.ctx
    group = SymmetryGroup(ctx) if graph.symmetry else None
    problems: list[tuple[int, str]] = []
    offsets = graph.out_offsets
    for u0 in range(0, graph.num_nodes, 256):
        u1 = min(u0 + 256, graph.num_nodes)
        block = graph.nodes[u0:u1].astype(np.int64)
        if np.any(block.min(axis=1) != 0):
            bad = u0 + int(np.flatnonzero(block.min(axis=1) != 0)[0])
            problems.append((int(offsets[bad]), f"node {bad} is not normalized"))
            if stop_at_first:
                return problems
        succ = [update_many(ctx, block, r) for r in range(ctx.m)]
        for e in range(offsets[u0], offsets[u1]):
            u, r, v, g, d = graph.edge(e)
            if not 0 <= r < ctx.m or not 0 <= v < graph.num_nodes:
                problems.append((e, f"edge {e} ({u}, r={r}, v={v}) points outside the graph"))
            else:
                nxt = succ[r][u - u0]
                w = block[u - u0]
                grad = int((nxt - w).max())
                dopt = int(nxt.min())
                target = nxt - dopt
                if group is not None:
                    target = group.canonicalize(target)
                if grad != g or dopt != d or not np.array_equal(target, graph.nodes[v]):
                    problems.append(
                        (
                            e,
                            f"edge {e} (u={u}, r={r}): stored v={v} grad={g} dopt={d}, "
                            f"recomputed grad={grad} dopt={dopt}"
                            + ("" if np.array_equal(target, graph.nodes[v]) else " and a different target"),
                        )
                    )
            if problems and stop_at_first:
                return problems
    return problems
