"""Diagnostic metrics for a potential on a work-function graph.

All counting metrics work on per-node values plus the stored edge annotations.
Integer-valued potentials are compared exactly; real-valued ones (external
processes) count a violation only when the shortfall exceeds ``EPS``.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np

from .errors import ExternalPotentialError
from .feasibility import BellmanCertificate, as_ratio, certify
from .graph import WorkFunctionGraph
from .potential import Potential

EPS = 1e-9
_NODE_BLOCK = 512


def worker_count() -> int:
    env = os.environ.get("WFBENCH_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def node_values(
    graph: WorkFunctionGraph, potential: Potential, workers: int | None = None
) -> np.ndarray:
    """Potential value of every node, each node evaluated once."""
    n = graph.num_nodes
    blocks = [(s, min(s + _NODE_BLOCK, n)) for s in range(0, n, _NODE_BLOCK)]
    workers = workers or worker_count()

    def run(block):
        s, e = block
        try:
            return potential.evaluate_many(graph.nodes[s:e])
        except ExternalPotentialError as exc:
            exc.node_id = s + (exc.node_id or 0)
            raise

    if workers > 1 and potential.integral and len(blocks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(parts)


def _is_integral(values: np.ndarray) -> bool:
    return np.issubdtype(np.asarray(values).dtype, np.integer)


def shortfalls(graph: WorkFunctionGraph, values: np.ndarray, c) -> np.ndarray:
    """Per-edge ``grad - (c+1)*dopt - (values[v] - values[u])``; positive means violated.

    Exact (integer or ``Fraction``-scaled) for integer values, float otherwise.
    Returned as float64 in either case; use :func:`violated_mask` for counting.
    """
    ratio = as_ratio(c)
    gain = values[graph.edge_v] - values[graph.edge_u]
    if _is_integral(values):
        p, q = ratio.numerator, ratio.denominator
        scaled = q * graph.grad - (p + q) * graph.dopt - q * gain.astype(np.int64)
        return scaled / q
    return graph.grad - float(ratio + 1) * graph.dopt - gain


def violated_mask(graph: WorkFunctionGraph, values: np.ndarray, c) -> np.ndarray:
    ratio = as_ratio(c)
    if _is_integral(values):
        p, q = ratio.numerator, ratio.denominator
        gain = (values[graph.edge_v] - values[graph.edge_u]).astype(np.int64)
        return q * graph.grad - (p + q) * graph.dopt - q * gain > 0
    return shortfalls(graph, values, c) > EPS


def violations_k(graph: WorkFunctionGraph, values: np.ndarray, c) -> tuple[int, float, float, float]:
    """Violated-edge count and the l1, l2, linf norms of the shortfalls."""
    mask = violated_mask(graph, values, c)
    s = shortfalls(graph, values, c)[mask]
    if s.size == 0:
        return 0, 0.0, 0.0, 0.0
    return int(s.size), float(s.sum()), float(math.sqrt(float((s * s).sum()))), float(s.max())


def violations_dmin_0(graph: WorkFunctionGraph, values: np.ndarray) -> int:
    """Violations among edges with zero OPT increase (where ``c`` plays no role)."""
    zero = graph.dopt == 0
    gain = values[graph.edge_v] - values[graph.edge_u]
    if _is_integral(values):
        bad = gain < graph.grad
    else:
        bad = graph.grad - gain > EPS
    return int(np.count_nonzero(bad & zero))


def hard_edges(graph: WorkFunctionGraph) -> np.ndarray:
    return (graph.dopt == 0) & (graph.grad > 0)


def detected_dmin_0_score(graph: WorkFunctionGraph, values: np.ndarray) -> float | None:
    """Fraction of hard edges across which the potential changes; None if there are none."""
    hard = hard_edges(graph)
    total = int(np.count_nonzero(hard))
    if total == 0:
        return None
    gain = values[graph.edge_v] - values[graph.edge_u]
    moved = gain != 0 if _is_integral(values) else np.abs(gain) > EPS
    return int(np.count_nonzero(moved & hard)) / total


def violations_renorm(
    graph: WorkFunctionGraph, potential: Potential, values: np.ndarray
) -> int:
    """Violations of ``phi(w_v + dopt) - phi(w_u) >= grad``."""
    shifted = values[graph.edge_v].astype(np.float64 if not _is_integral(values) else np.int64)
    pos = np.flatnonzero(graph.dopt > 0)
    if potential.shift_slope is not None:
        shifted = shifted + potential.shift_slope * graph.dopt
    elif pos.size:
        shifted = shifted.astype(np.float64)
        for s in range(0, pos.size, _NODE_BLOCK):
            idx = pos[s : s + _NODE_BLOCK]
            vecs = graph.nodes[graph.edge_v[idx]].astype(np.int64) + graph.dopt[idx, None]
            shifted[idx] = potential.evaluate_many(vecs)
    gain = shifted - values[graph.edge_u]
    if _is_integral(gain):
        return int(np.count_nonzero(gain < graph.grad))
    return int(np.count_nonzero(graph.grad - gain > EPS))


def strong_hypothesis_rho(graph: WorkFunctionGraph, values: np.ndarray) -> float:
    """Smallest ratio satisfying every edge with positive OPT increase (``-inf`` if none)."""
    pos = graph.dopt > 0
    if not pos.any():
        return -math.inf
    gain = (values[graph.edge_v] - values[graph.edge_u])[pos]
    if _is_integral(values):
        return float(_max_fraction(graph.grad[pos] - gain.astype(np.int64), graph.dopt[pos]) - 1)
    return float(((graph.grad[pos] - gain) / graph.dopt[pos]).max() - 1)


def _max_fraction(num: np.ndarray, den: np.ndarray) -> Fraction:
    # float screen, then exact comparison among the near-maximal candidates
    approx = num / den
    top = approx.max()
    cands = np.flatnonzero(approx >= top - 1e-6 * max(1.0, abs(top)))
    return max(Fraction(int(num[i]), int(den[i])) for i in cands)


def opt_upper_bound(graph: WorkFunctionGraph, potential: Potential) -> tuple[float, bool]:
    """Growth rate of the potential under adding a constant, probed at the start node.

    Returns the slope measured with a shift of 1 and whether the shift-16 slope
    disagrees (a nonlinear response).
    """
    w = graph.nodes[graph.start].astype(np.int64)
    probes = potential.evaluate_many(np.stack([w, w + 1, w + 16]))
    base = probes[0]
    s1 = float(probes[1] - base)
    s16 = float(probes[2] - base) / 16
    return s1, not math.isclose(s1, s16, rel_tol=0, abs_tol=1e-9)


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        return None
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(xc @ xc)), math.sqrt(float(yc @ yc))
    if sx == 0 or sy == 0:
        return None
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def bellman_correlations(
    graph: WorkFunctionGraph, values: np.ndarray, cert: BellmanCertificate
) -> dict[str, float | None]:
    """Node- and edge-level agreement with a Bellman-Ford potential.

    r2 is the squared Pearson correlation (simple linear regression).
    """
    psi = cert.psi_values
    node_corr = _pearson(values, psi)
    edge_corr = _pearson(
        values[graph.edge_v] - values[graph.edge_u], psi[graph.edge_v] - psi[graph.edge_u]
    )
    return {
        "bellman_node_r2": None if node_corr is None else node_corr**2,
        "bellman_node_corr": node_corr,
        "bellman_edge_r2": None if edge_corr is None else edge_corr**2,
        "bellman_edge_corr": edge_corr,
    }


def sign_breakdown(graph: WorkFunctionGraph, values: np.ndarray, c) -> dict[str, dict[str, int]]:
    """Edges and violations split by the sign of the edge weight at ratio ``c``."""
    ratio = as_ratio(c)
    w = ratio.denominator * graph.grad - (ratio.numerator + ratio.denominator) * graph.dopt
    bad = violated_mask(graph, values, c)
    out = {}
    for name, sel in (("positive", w > 0), ("zero", w == 0), ("negative", w < 0)):
        out[name] = {
            "edges": int(np.count_nonzero(sel)),
            "violations": int(np.count_nonzero(sel & bad)),
        }
    return out


FLAG_INFEASIBLE_FORM = "ratio-infeasible-form"
FLAG_REDUCIBLE = "ratio-reducible"
FLAG_MUST_INCREASE = "ratio-must-increase"


def interpret(report: "EvaluationReport") -> list[str]:
    flags = []
    if report.opt_upper_bound < float(report.c) + 1:
        flags.append(FLAG_INFEASIBLE_FORM)
    rho = report.strong_hypothesis_rho
    if rho < report.opt_upper_bound and report.violations_dmin_0 == 0:
        flags.append(FLAG_REDUCIBLE)
    if rho > report.opt_upper_bound:
        flags.append(FLAG_MUST_INCREASE)
    return flags


def _encode(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def _decode(x):
    if x in ("inf", "-inf", "nan"):
        return float(x)
    return x


@dataclass
class EvaluationReport:
    c: Any
    edges_total: int
    violations_k: int
    violations_k_l1: float
    violations_k_l2: float
    violations_k_linf: float
    violations_dmin_0: int
    detected_dmin_0_score: float | None
    violations_renorm: int | None
    strong_hypothesis_rho: float
    opt_upper_bound: float
    opt_upper_bound_nonlinear: bool
    score: float
    by_weight_sign: dict
    flags: list = field(default_factory=list)
    bellman_node_r2: float | None = None
    bellman_node_corr: float | None = None
    bellman_edge_r2: float | None = None
    bellman_edge_corr: float | None = None
    instance: dict = field(default_factory=dict)
    potential: dict | None = None

    def to_json(self) -> dict:
        out = asdict(self)
        c = as_ratio(self.c)
        out["c"] = int(c) if c.denominator == 1 else str(c)
        return {key: _encode(val) for key, val in out.items()}

    @classmethod
    def from_json(cls, obj: dict) -> "EvaluationReport":
        return cls(**{key: _decode(val) for key, val in obj.items()})

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"

    def summary_rows(self) -> list[tuple[str, str]]:
        def fmt(x):
            if x is None:
                return "undefined"
            if isinstance(x, float):
                return f"{x:.6g}"
            return str(x)

        rows = [
            ("c", fmt(self.to_json()["c"])),
            ("edges", fmt(self.edges_total)),
            ("violations_k", fmt(self.violations_k)),
            ("score", fmt(self.score)),
            ("violations_k_l1", fmt(self.violations_k_l1)),
            ("violations_k_l2", fmt(self.violations_k_l2)),
            ("violations_k_linf", fmt(self.violations_k_linf)),
            ("violations_dmin_0", fmt(self.violations_dmin_0)),
            ("detected_dmin_0_score", fmt(self.detected_dmin_0_score)),
            ("violations_renorm", fmt(self.violations_renorm)),
            (
                "strong_hypothesis_rho",
                "no constraining edges"
                if self.strong_hypothesis_rho == -math.inf
                else fmt(self.strong_hypothesis_rho),
            ),
            (
                "opt_upper_bound",
                fmt(self.opt_upper_bound) + (" (nonlinear)" if self.opt_upper_bound_nonlinear else ""),
            ),
        ]
        for key in ("bellman_node_r2", "bellman_node_corr", "bellman_edge_r2", "bellman_edge_corr"):
            rows.append((key, fmt(getattr(self, key))))
        for sign, d in self.by_weight_sign.items():
            rows.append((f"weight {sign}", f"{d['violations']} / {d['edges']}"))
        rows.append(("flags", ", ".join(self.flags) or "-"))
        return rows


def instance_info(graph: WorkFunctionGraph) -> dict:
    return {
        "k": graph.k,
        "m": graph.m,
        "metric": graph.space.kind,
        "nodes": graph.num_nodes,
        "edges": graph.num_edges,
        "self_loops": graph.self_loops,
        "symmetry": graph.symmetry,
        "probabilistic": graph.probabilistic,
        "seed": "all" if graph.seed_config is None else list(graph.seed_config),
        "checksum": graph.checksum,
    }


def evaluate(
    graph: WorkFunctionGraph,
    potential: Potential,
    c,
    *,
    values: np.ndarray | None = None,
    with_bellman: bool = False,
    cert: BellmanCertificate | None = None,
    workers: int | None = None,
) -> EvaluationReport:
    """Full diagnostic report for ``potential`` at ratio ``c``."""
    ratio = as_ratio(c)
    if values is None:
        values = node_values(graph, potential, workers)
    count, l1, l2, linf = violations_k(graph, values, ratio)
    slope, nonlinear = opt_upper_bound(graph, potential)
    report = EvaluationReport(
        c=ratio,
        edges_total=graph.num_edges,
        violations_k=count,
        violations_k_l1=l1,
        violations_k_l2=l2,
        violations_k_linf=linf,
        violations_dmin_0=violations_dmin_0(graph, values),
        detected_dmin_0_score=detected_dmin_0_score(graph, values),
        violations_renorm=violations_renorm(graph, potential, values),
        strong_hypothesis_rho=strong_hypothesis_rho(graph, values),
        opt_upper_bound=slope,
        opt_upper_bound_nonlinear=nonlinear,
        score=1 - count / graph.num_edges if graph.num_edges else 1.0,
        by_weight_sign=sign_breakdown(graph, values, ratio),
        instance=instance_info(graph),
    )
    if with_bellman or cert is not None:
        if cert is None:
            cert = certify(graph, ratio)
        if cert.feasible:
            for key, val in bellman_correlations(graph, values, cert).items():
                setattr(report, key, val)
    report.flags = interpret(report)
    spec = getattr(potential, "spec", None)
    if spec is not None:
        report.potential = spec.to_json()
    return report
