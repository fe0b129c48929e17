"""Binary ``.wfg`` graph files.

Layout (all little-endian)::

    header   "WFG1" version:u16 k:u16 m:u32 metric_kind:u8 flags:u8 reserved:u16
             nodes:u64 edges:u64 start:u32 config_count:u32
    seed     k x u16            start configuration (zeros when every config seeds)
    metric   m*m x u32 dist, m x i32 antipode (-1 when absent)
    nodes    nodes x config_count x u32
    edges    edges x (u:u32 r:u16 v:u32 grad:i32 dopt:i32), packed
    trailer  u64 blake2b-64 checksum of every preceding byte

flags: bit0 self-loops, bit1 symmetry-dedup, bit2 probabilistic-visited,
bit3 seeded from every configuration.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import GraphChecksumError, GraphFormatError, GraphTruncatedError, GraphVersionError
from .graph import WorkFunctionGraph
from .metric import MetricSpace, make_circle
from .workfn import WFContext

MAGIC = b"WFG1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHIBBHQQII")
_CHECKSUM = struct.Struct("<Q")
EDGE_DTYPE = np.dtype(
    [("u", "<u4"), ("r", "<u2"), ("v", "<u4"), ("grad", "<i4"), ("dopt", "<i4")]
)

_KIND_CODES = {"circle": 0, "explicit": 1}
_FLAG_SELF_LOOPS = 1
_FLAG_SYMMETRY = 2
_FLAG_PROBABILISTIC = 4
_FLAG_ALL_SEEDS = 8


def checksum(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def serialize_graph(graph: WorkFunctionGraph) -> bytes:
    space = graph.space
    flags = (
        (_FLAG_SELF_LOOPS if graph.self_loops else 0)
        | (_FLAG_SYMMETRY if graph.symmetry else 0)
        | (_FLAG_PROBABILISTIC if graph.probabilistic else 0)
        | (_FLAG_ALL_SEEDS if graph.seed_config is None else 0)
    )
    parts = [
        _HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            graph.k,
            graph.m,
            _KIND_CODES[space.kind],
            flags,
            0,
            graph.num_nodes,
            graph.num_edges,
            graph.start,
            graph.ctx.count,
        ),
        np.asarray(graph.seed_config or (0,) * graph.k, dtype="<u2").tobytes(),
        space.dist.astype("<u4").tobytes(),
        np.asarray(
            space.antipode if space.antipode is not None else [-1] * graph.m, dtype="<i4"
        ).tobytes(),
    ]
    if graph.num_nodes and graph.nodes.min() < 0:
        raise GraphFormatError("node values must be nonnegative to store as u32")
    parts.append(np.ascontiguousarray(graph.nodes, dtype="<u4").tobytes())
    edges = np.empty(graph.num_edges, dtype=EDGE_DTYPE)
    edges["u"] = graph.edge_u
    edges["r"] = graph.edge_r
    edges["v"] = graph.edge_v
    edges["grad"] = graph.grad
    edges["dopt"] = graph.dopt
    parts.append(edges.tobytes())
    body = b"".join(parts)
    return body + _CHECKSUM.pack(checksum(body))


def save_graph(graph: WorkFunctionGraph, path: str | Path) -> str:
    """Write ``graph`` and return the hex checksum stored in the trailer."""
    data = serialize_graph(graph)
    Path(path).write_bytes(data)
    graph.checksum = data[-8:][::-1].hex()
    return graph.checksum


def _take(data: bytes, pos: int, n: int, what: str) -> tuple[bytes, int]:
    if pos + n > len(data):
        raise GraphTruncatedError(f"file ends inside the {what} section")
    return data[pos : pos + n], pos + n


def deserialize_graph(data: bytes, verify_checksum: bool = True) -> WorkFunctionGraph:
    if len(data) < 4 or data[:4] != MAGIC:
        raise GraphFormatError("not a WFG1 graph file (bad magic)")
    if len(data) < _HEADER.size:
        raise GraphTruncatedError("file ends inside the header")
    (_, version, k, m, kind, flags, _, n_nodes, n_edges, start, count) = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise GraphVersionError(
            f"graph format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    pos = _HEADER.size
    raw, pos = _take(data, pos, 2 * k, "seed")
    seed = tuple(int(x) for x in np.frombuffer(raw, dtype="<u2"))
    raw, pos = _take(data, pos, 4 * m * m, "metric")
    dist = np.frombuffer(raw, dtype="<u4").reshape(m, m).astype(np.int64)
    raw, pos = _take(data, pos, 4 * m, "antipode")
    antipode = np.frombuffer(raw, dtype="<i4")
    raw, pos = _take(data, pos, 4 * n_nodes * count, "node")
    nodes = np.frombuffer(raw, dtype="<u4").reshape(n_nodes, count).astype(np.int32)
    raw, pos = _take(data, pos, EDGE_DTYPE.itemsize * n_edges, "edge")
    edges = np.frombuffer(raw, dtype=EDGE_DTYPE)
    raw, pos = _take(data, pos, _CHECKSUM.size, "checksum")
    (stored,) = _CHECKSUM.unpack(raw)
    if pos != len(data):
        raise GraphFormatError(f"{len(data) - pos} trailing bytes after the checksum")
    if verify_checksum and checksum(data[: pos - _CHECKSUM.size]) != stored:
        raise GraphChecksumError("graph file checksum mismatch")

    if kind == _KIND_CODES["circle"]:
        space = make_circle(m)
        if not np.array_equal(space.dist, dist):
            raise GraphFormatError("circle metric section does not match a circle")
    elif kind == _KIND_CODES["explicit"]:
        space = MetricSpace(dist, None if antipode[0] < 0 else tuple(antipode))
    else:
        raise GraphFormatError(f"unknown metric kind code {kind}")
    ctx = WFContext(space, k)
    if ctx.count != count:
        raise GraphFormatError(f"config count {count} does not match k={k}, m={m}")

    return WorkFunctionGraph(
        ctx=ctx,
        nodes=nodes,
        edge_u=edges["u"].astype(np.int64),
        edge_r=edges["r"].astype(np.int64),
        edge_v=edges["v"].astype(np.int64),
        grad=edges["grad"].astype(np.int64),
        dopt=edges["dopt"].astype(np.int64),
        start=start,
        self_loops=bool(flags & _FLAG_SELF_LOOPS),
        symmetry=bool(flags & _FLAG_SYMMETRY),
        probabilistic=bool(flags & _FLAG_PROBABILISTIC),
        seed_config=None if flags & _FLAG_ALL_SEEDS else seed,
        checksum=raw[::-1].hex(),
    )


def load_graph(path: str | Path, verify_checksum: bool = True) -> WorkFunctionGraph:
    return deserialize_graph(Path(path).read_bytes(), verify_checksum=verify_checksum)
