"""Bellman-Ford certification of a work-function graph at a fixed ratio.

The constraint ``psi[v] - psi[u] >= grad - (c+1) * dopt`` on every edge is a
system of difference constraints. Shortest paths with lengths
``(c+1) * dopt - grad`` from a virtual source joined to every node give
``psi = -dist``; a negative cycle means no potential exists at ratio ``c``.

Rational ratios ``c = p/q`` are handled exactly by scaling every weight by
``q``; ``psi`` is then stored in units of ``1/q``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .graph import WorkFunctionGraph

logger = logging.getLogger(__name__)

# How often (in relaxation rounds) the predecessor graph is searched for a cycle.
_CYCLE_CHECK_EVERY = 32


def as_ratio(c) -> Fraction:
    """Parse a ratio given as int, Fraction, float or text like ``"7/2"``."""
    if isinstance(c, Fraction):
        ratio = c
    elif isinstance(c, str):
        ratio = Fraction(c.strip())
    elif isinstance(c, float):
        ratio = Fraction(c).limit_denominator(10**6)
    else:
        ratio = Fraction(int(c))
    if ratio < 1:
        raise ValueError(f"competitive ratio must be at least 1, got {ratio}")
    return ratio


def scaled_weights(graph: WorkFunctionGraph, c) -> tuple[np.ndarray, int]:
    """Edge weights times ``q`` for ``c = p/q``, as exact integers, and ``q``."""
    ratio = as_ratio(c)
    p, q = ratio.numerator, ratio.denominator
    return q * graph.grad - (p + q) * graph.dopt, q


@dataclass
class BellmanCertificate:
    c: Fraction
    feasible: bool
    psi: np.ndarray | None = None  # integer potential in units of 1/scale
    scale: int = 1
    cycle: list[int] | None = None  # edge indices forming a positive-weight cycle
    rounds: int = 0

    @property
    def psi_values(self) -> np.ndarray:
        """Potential as real numbers."""
        if self.psi is None:
            raise ValueError("infeasible certificate carries no potential")
        return self.psi / self.scale if self.scale != 1 else self.psi.astype(np.float64)

    def to_json(self) -> dict:
        c = int(self.c) if self.c.denominator == 1 else str(self.c)
        out = {"c": c, "feasible": self.feasible, "scale": self.scale}
        if self.psi is not None:
            out["psi"] = self.psi.tolist()
        if self.cycle is not None:
            out["cycle"] = list(self.cycle)
        return out


def _pred_cycle(pred_edge: np.ndarray, edge_u: np.ndarray) -> list[int] | None:
    """A cycle in the predecessor forest, as edge indices in path order, if any."""
    n = pred_edge.shape[0]
    parent = np.where(pred_edge >= 0, edge_u[np.maximum(pred_edge, 0)], -1)
    state = np.zeros(n, dtype=np.int8)  # 0 new, 1 on current walk, 2 done
    for s in range(n):
        if state[s]:
            continue
        walk = []
        x = s
        while x >= 0 and state[x] == 0:
            state[x] = 1
            walk.append(x)
            x = parent[x]
        if x >= 0 and state[x] == 1:
            cyc_nodes = walk[walk.index(x) :]
            for y in walk:
                state[y] = 2
            # walk follows parent pointers, so reverse for forward edge order
            return [int(pred_edge[y]) for y in reversed(cyc_nodes)]
        for y in walk:
            state[y] = 2
    return None


def certify(graph: WorkFunctionGraph, c) -> BellmanCertificate:
    """Feasible potential or a witnessing cycle at ratio ``c``.

    Relaxation proceeds in rounds; each round relaxes only the out-edges of
    nodes whose distance dropped in the previous round.
    """
    ratio = as_ratio(c)
    weights, q = scaled_weights(graph, ratio)
    length = -weights
    u, v = graph.edge_u, graph.edge_v
    n = graph.num_nodes
    dist = np.zeros(n, dtype=np.int64)
    pred = np.full(n, -1, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    rounds = 0
    while active.any():
        rounds += 1
        eidx = np.flatnonzero(active[u])
        cand = dist[u[eidx]] + length[eidx]
        better = cand < dist[v[eidx]]
        eidx, cand = eidx[better], cand[better]
        if eidx.size == 0:
            break
        new = dist.copy()
        np.minimum.at(new, v[eidx], cand)
        hit = cand == new[v[eidx]]
        pred[v[eidx[hit]]] = eidx[hit]
        active = new < dist
        dist = new
        if rounds % _CYCLE_CHECK_EVERY == 0 or rounds > n:
            cycle = _pred_cycle(pred, u)
            if cycle is not None and weights[cycle].sum() > 0:
                logger.info("negative cycle of %d edges after %d rounds", len(cycle), rounds)
                return BellmanCertificate(ratio, False, scale=q, cycle=cycle, rounds=rounds)
            if rounds > 2 * n + 1:
                raise RuntimeError("Bellman-Ford failed to isolate a negative cycle")
    return BellmanCertificate(ratio, True, psi=-dist, scale=q, rounds=rounds)


def verify_certificate(graph: WorkFunctionGraph, cert: BellmanCertificate) -> int:
    """Number of edges whose constraint the certificate's potential violates."""
    if not cert.feasible or cert.psi is None:
        raise ValueError("only feasible certificates can be verified")
    weights, q = scaled_weights(graph, cert.c)
    psi = np.asarray(cert.psi, dtype=np.int64)
    if q != cert.scale:
        raise ValueError("certificate scale does not match its ratio")
    gain = psi[graph.edge_v] - psi[graph.edge_u]
    return int(np.count_nonzero(gain < weights))


def cycle_weight(graph: WorkFunctionGraph, cycle, c) -> Fraction:
    """Total required increase around ``cycle``; positive means infeasible."""
    weights, q = scaled_weights(graph, c)
    return Fraction(int(weights[list(cycle)].sum()), q)
