"""Ask/tell search over canonical potentials with a sampled proxy evaluator.

The proxy checks a candidate on the union of a cache of recently violated
("hard") edges and a random edge sample, evaluating each endpoint node at most
once and stopping after a fixed number of violations. Families propose
candidates (``ask``) and receive proxy scores back (``tell``); when the budget
runs out their final candidates are scored exactly.
"""
from __future__ import annotations

import itertools
import logging
import math
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import SearchConfigError, WFBenchError
from .feasibility import as_ratio
from .graph import WorkFunctionGraph
from .metrics import EvaluationReport, evaluate, worker_count
from .potential import CanonicalTemplate, Potential, PotentialSpec, compile_potential, validate_spec

logger = logging.getLogger(__name__)

_CHUNK = 512


@dataclass
class ProxyConfig:
    sample_size: int = 50_000
    hard_cache_capacity: int = 4096
    early_stop_violations: int | None = 32  # None or 0 disables early stopping
    confirm_sample_size: int = 200_000
    rng_seed: int = 1234

    def validate(self, edges_total: int | None = None) -> None:
        if self.sample_size < 0 or self.confirm_sample_size < 0:
            raise SearchConfigError("sample sizes must be nonnegative")
        if self.hard_cache_capacity < 1:
            raise SearchConfigError("hard-edge cache capacity must be positive")
        if self.early_stop_violations is not None and self.early_stop_violations < 0:
            raise SearchConfigError("early-stop threshold must be positive (or 0 to disable)")
        if edges_total is not None and self.sample_size > edges_total:
            raise SearchConfigError(
                f"sample size {self.sample_size} exceeds the {edges_total} edges of the graph"
            )


class HardEdgeCache:
    """Edges recently seen violated, evicted least-recently-violated first."""

    def __init__(self, capacity: int = 4096):
        self.capacity = capacity
        self._edges: OrderedDict[int, None] = OrderedDict()

    def __len__(self):
        return len(self._edges)

    def __contains__(self, e):
        return e in self._edges

    def add(self, edges: Iterable[int]) -> None:
        for e in edges:
            e = int(e)
            self._edges[e] = None
            self._edges.move_to_end(e)
        while len(self._edges) > self.capacity:
            self._edges.popitem(last=False)

    def edges(self) -> np.ndarray:
        """Cached edges, most recently violated first."""
        return np.fromiter(reversed(self._edges), dtype=np.int64, count=len(self._edges))


@dataclass
class ProxyResult:
    estimate: int
    l1: float
    checked: int
    stopped_early: bool
    violated: list[int]
    nodes_evaluated: int

    def key(self) -> tuple:
        return (self.estimate, self.l1)


def _rng_for(seed: int, serial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, serial]))


def proxy_score(
    graph: WorkFunctionGraph,
    potential: Potential,
    c,
    proxy: ProxyConfig,
    hard_cache: HardEdgeCache | None = None,
    *,
    sample_size: int | None = None,
    serial: int = 0,
) -> ProxyResult:
    """Violations of ``potential`` on cached hard edges plus a random edge sample.

    Nodes are evaluated lazily and memoized for this call. The random sample
    is drawn from ``proxy.rng_seed`` and ``serial`` only, so results do not
    depend on evaluation order.
    """
    ratio = as_ratio(c)
    p, q = ratio.numerator, ratio.denominator
    size = proxy.sample_size if sample_size is None else sample_size
    size = min(size, graph.num_edges)
    cached = hard_cache.edges() if hard_cache is not None else np.zeros(0, dtype=np.int64)
    sample = _rng_for(proxy.rng_seed, serial).choice(graph.num_edges, size=size, replace=False)
    order = np.concatenate([cached, sample])
    _, first = np.unique(order, return_index=True)
    order = order[np.sort(first)]

    stop = proxy.early_stop_violations or None
    memo: dict[int, float] = {}
    integral = potential.integral
    violated: list[int] = []
    l1 = 0.0
    checked = 0
    for s in range(0, order.size, _CHUNK):
        edges = order[s : s + _CHUNK]
        us, vs = graph.edge_u[edges], graph.edge_v[edges]
        need = [x for x in dict.fromkeys(np.concatenate([us, vs]).tolist()) if x not in memo]
        if need:
            vals = potential.evaluate_many(graph.nodes[need])
            memo.update(zip(need, vals.tolist()))
        gain = np.array([memo[v] - memo[u] for u, v in zip(us.tolist(), vs.tolist())])
        if integral:
            short = q * graph.grad[edges] - (p + q) * graph.dopt[edges] - q * gain.astype(np.int64)
            bad = np.flatnonzero(short > 0)
            amounts = short[bad] / q
        else:
            short = graph.grad[edges] - float(ratio + 1) * graph.dopt[edges] - gain
            bad = np.flatnonzero(short > 1e-9)
            amounts = short[bad]
        if stop is not None and len(violated) + bad.size >= stop:
            take = stop - len(violated)
            violated.extend(edges[bad[:take]].tolist())
            l1 += float(amounts[:take].sum())
            checked += int(bad[take - 1]) + 1 if take else 0
            return ProxyResult(len(violated), l1, checked, True, violated, len(memo))
        violated.extend(edges[bad].tolist())
        l1 += float(amounts.sum())
        checked += edges.size
    return ProxyResult(len(violated), l1, checked, False, violated, len(memo))


@dataclass
class Candidate:
    spec: PotentialSpec
    provenance: str = ""
    stage: str = "quick"  # quick | confirm | final


@dataclass
class Told:
    candidate: Candidate
    result: ProxyResult | None
    error: str | None = None


class PotentialFamily(Protocol):
    def ask(self, limit: int) -> list[Candidate]: ...

    def tell(self, results: list[Told]) -> None: ...

    def final_candidates(self) -> list[Candidate]: ...


class SearchEvaluator:
    """Proxy scoring of candidates against one graph at one ratio.

    Compiled canonical templates are reused across candidates that share an
    index matrix. ``cache_stages`` selects whose violated edges feed the cache.
    """

    def __init__(
        self,
        graph: WorkFunctionGraph,
        c,
        proxy: ProxyConfig | None = None,
        cache_stages: Sequence[str] = ("quick", "confirm"),
    ):
        self.graph = graph
        self.c = as_ratio(c)
        self.proxy = proxy or ProxyConfig()
        self.proxy.validate()
        self.cache = HardEdgeCache(self.proxy.hard_cache_capacity)
        self.cache_stages = set(cache_stages)
        self._templates: dict[tuple, CanonicalTemplate] = {}
        self.serial = 0

    def compile(self, spec: PotentialSpec) -> Potential:
        validate_spec(spec, self.graph.ctx)
        if spec.kind != "canonical":
            return compile_potential(self.graph.ctx, spec)
        key = (spec.n, spec.index_matrix)
        template = self._templates.get(key)
        if template is None:
            template = self._templates[key] = CanonicalTemplate(self.graph.ctx, spec)
        return template.bind(spec)

    def _score(self, cand: Candidate, serial: int, cache_edges: np.ndarray) -> Told:
        snapshot = HardEdgeCache(max(1, cache_edges.size))
        snapshot.add(cache_edges[::-1])
        size = self.proxy.confirm_sample_size if cand.stage == "confirm" else self.proxy.sample_size
        try:
            pot = self.compile(cand.spec)
            try:
                res = proxy_score(
                    self.graph, pot, self.c, self.proxy, snapshot, sample_size=size, serial=serial
                )
            finally:
                pot.close()
        except WFBenchError as exc:
            return Told(cand, None, f"{type(exc).__name__}: {exc}")
        return Told(cand, res)

    def score_batch(self, cands: list[Candidate], workers: int = 1) -> list[Told]:
        """Score candidates concurrently against the cache as it stood before the batch.

        Cache insertions are applied afterwards, in candidate order.
        """
        cache_edges = self.cache.edges()
        serials = list(range(self.serial, self.serial + len(cands)))
        self.serial += len(cands)
        if workers > 1 and len(cands) > 1:
            with ThreadPoolExecutor(workers) as pool:
                out = list(pool.map(lambda a: self._score(a[0], a[1], cache_edges), zip(cands, serials)))
        else:
            out = [self._score(cd, s, cache_edges) for cd, s in zip(cands, serials)]
        for told in out:
            if told.result is not None and told.candidate.stage in self.cache_stages:
                self.cache.add(told.result.violated)
        return out

    def exact(self, spec: PotentialSpec) -> EvaluationReport:
        pot = self.compile(spec)
        try:
            return evaluate(self.graph, pot, self.c, workers=1)
        finally:
            pot.close()


@dataclass
class Budget:
    max_evals: int = 1000
    max_secs: float = math.inf


@dataclass
class SearchOutcome:
    best: Candidate
    best_report: EvaluationReport
    history: list[dict]
    evaluations: int
    exact_evaluations: int
    wall_time: float
    finals: list[tuple[Candidate, EvaluationReport]] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "best": {
                "spec": self.best.spec.to_json(),
                "provenance": self.best.provenance,
                "stage": self.best.stage,
            },
            "best_report": self.best_report.to_json(),
            "history": self.history,
            "budget_used": {
                "evaluations": self.evaluations,
                "exact_evaluations": self.exact_evaluations,
                "wall_time_s": round(self.wall_time, 3),
            },
            "finals": [
                {"spec": cd.spec.to_json(), "violations_k": rep.violations_k}
                for cd, rep in self.finals
            ],
            "notes": self.notes,
        }


def _report_key(report: EvaluationReport, spec: PotentialSpec) -> tuple:
    return (report.violations_k, report.violations_k_l1, report.violations_k_l2, spec.key())


def ask_tell_loop(
    family: PotentialFamily,
    evaluator: SearchEvaluator,
    budget: Budget,
    workers: int | None = None,
) -> SearchOutcome:
    """Drive ``family`` until the budget is spent, then score its finalists exactly."""
    workers = workers or worker_count()
    started = time.monotonic()
    deadline = started + budget.max_secs
    evals = 0
    history: list[dict] = []
    while evals < budget.max_evals and time.monotonic() < deadline:
        cands = family.ask(budget.max_evals - evals)
        if not cands:
            break
        cands = cands[: budget.max_evals - evals]
        told = evaluator.score_batch(cands, workers)
        evals += len(told)
        for t in told:
            entry = {
                "serial": len(history),
                "stage": t.candidate.stage,
                "provenance": t.candidate.provenance,
                "coefs": list(t.candidate.spec.coefs),
            }
            if t.result is not None:
                entry.update(
                    estimate=t.result.estimate,
                    l1=t.result.l1,
                    checked=t.result.checked,
                    stopped_early=t.result.stopped_early,
                )
            else:
                entry["error"] = t.error
            history.append(entry)
        family.tell(told)

    finals = []
    seen = set()
    for cand in family.final_candidates():
        key = cand.spec.key()
        if key in seen:
            continue
        seen.add(key)
        try:
            report = evaluator.exact(cand.spec)
        except WFBenchError as exc:
            logger.warning("final candidate rejected: %s", exc)
            continue
        finals.append((Candidate(cand.spec, cand.provenance, "final"), report))
    if not finals:
        raise SearchConfigError("family produced no valid final candidate")
    best, best_report = min(finals, key=lambda fr: _report_key(fr[1], fr[0].spec))
    return SearchOutcome(
        best=best,
        best_report=best_report,
        history=history,
        evaluations=evals,
        exact_evaluations=len(finals),
        wall_time=time.monotonic() - started,
        finals=finals,
    )


class NaiveFamily:
    """Proposes the seed once and returns it as the only finalist."""

    def __init__(self, seed: PotentialSpec):
        self.seed = seed
        self._asked = False

    def ask(self, limit: int) -> list[Candidate]:
        if self._asked:
            return []
        self._asked = True
        return [Candidate(self.seed, "seed")]

    def tell(self, results: list[Told]) -> None:
        pass

    def final_candidates(self) -> list[Candidate]:
        return [Candidate(self.seed, "seed")]


def _free_positions(n: int, frozen_point: int | None) -> list[int]:
    """Coefficient positions not touching ``frozen_point`` (1-based), all if None."""
    pairs = list(itertools.combinations(range(1, n + 1), 2))
    return [i for i, (a, b) in enumerate(pairs) if frozen_point not in (a, b)]


class SweepFamily:
    """Every coefficient vector with free entries drawn from ``values``."""

    def __init__(
        self,
        seed: PotentialSpec,
        values: Sequence[int] = (-1, 0, 1),
        frozen_point: int | None = None,
        batch: int = 64,
        keep: int = 8,
    ):
        if seed.kind != "canonical":
            raise SearchConfigError("coefficient sweeps need a canonical seed")
        self.seed = seed
        self.free = _free_positions(seed.n, frozen_point)
        self.values = tuple(values)
        self._iter = itertools.product(self.values, repeat=len(self.free))
        self.batch = batch
        self.keep = keep
        self.scored: list[tuple[tuple, Candidate]] = []

    def ask(self, limit: int) -> list[Candidate]:
        out = []
        for combo in itertools.islice(self._iter, min(self.batch, limit)):
            coefs = list(self.seed.coefs)
            for pos, val in zip(self.free, combo):
                coefs[pos] = val
            out.append(Candidate(self.seed.with_coefs(coefs), "sweep"))
        return out

    def tell(self, results: list[Told]) -> None:
        for t in results:
            if t.result is not None:
                self.scored.append((t.result.key() + (t.candidate.spec.key(),), t.candidate))
        self.scored.sort(key=lambda x: x[0])
        del self.scored[self.keep :]

    def final_candidates(self) -> list[Candidate]:
        return [Candidate(self.seed, "seed")] + [c for _, c in self.scored]


# Mutation phases: (step sizes, coefficient magnitude bound).
DEFAULT_PHASES = (((1,), 1), ((1, 2), 2), ((1, 2, 3), 3))


def _neighbors(coefs, free, steps, bound) -> list[tuple[int, ...]]:
    out = []
    for pos in free:
        for step in steps:
            for sign in (1, -1):
                val = coefs[pos] + sign * step
                if abs(val) <= bound:
                    new = list(coefs)
                    new[pos] = val
                    out.append(tuple(new))
    return out


class CoefficientLocalSearch:
    """Hill climbing on the coefficient vector with escalating step sizes.

    Neighbours of the incumbent are proxy-scored; the first phase uses unit
    steps, later phases larger jumps and magnitudes once a phase is exhausted.
    """

    def __init__(
        self,
        seed: PotentialSpec,
        phases=DEFAULT_PHASES,
        frozen_point: int | None = None,
        batch: int = 16,
        keep: int = 8,
    ):
        if seed.kind != "canonical":
            raise SearchConfigError("coefficient search needs a canonical seed")
        self.seed = seed
        self.phases = tuple(phases)
        self.free = _free_positions(seed.n, frozen_point)
        if not self.free or not self.phases:
            raise SearchConfigError("empty mutation set: no free coefficients or no phases")
        self.batch = batch
        self.keep = keep
        self.phase = 0
        self.incumbent = tuple(seed.coefs)
        self.incumbent_key: tuple | None = None
        self.seen = {self.incumbent}
        self.pending: list[tuple[int, ...]] = [self.incumbent]
        self.scored: list[tuple[tuple, Candidate]] = []

    def _expand(self) -> None:
        while not self.pending and self.phase < len(self.phases):
            steps, bound = self.phases[self.phase]
            fresh = [c for c in _neighbors(self.incumbent, self.free, steps, bound) if c not in self.seen]
            if fresh:
                self.seen.update(fresh)
                self.pending.extend(fresh)
            else:
                self.phase += 1

    def ask(self, limit: int) -> list[Candidate]:
        self._expand()
        take, self.pending = self.pending[: min(self.batch, limit)], self.pending[min(self.batch, limit) :]
        return [Candidate(self.seed.with_coefs(c), f"local/phase{self.phase}") for c in take]

    def tell(self, results: list[Told]) -> None:
        improved = False
        for t in results:
            if t.result is None:
                continue
            key = t.result.key() + (t.candidate.spec.key(),)
            self.scored.append((key, t.candidate))
            if self.incumbent_key is None or key < self.incumbent_key:
                self.incumbent_key = key
                self.incumbent = tuple(t.candidate.spec.coefs)
                improved = True
        self.scored.sort(key=lambda x: x[0])
        del self.scored[self.keep :]
        if improved:
            # restart the neighbourhood around the new incumbent
            self.pending = []
            self.phase = 0

    def final_candidates(self) -> list[Candidate]:
        return [Candidate(self.seed, "seed")] + [c for _, c in self.scored]


@dataclass
class StageConfig:
    """Quick/confirm staging. ``promotion_threshold`` overrides the slack rule."""

    promotion_slack: int = 2
    promotion_threshold: int | None = None
    finalists: int = 8
    phases: tuple = DEFAULT_PHASES
    frozen_point: int | None = None
    quick_batch: int = 16
    structured_seeds: bool = True


class StagedCoefficientSearch:
    """Quick sampled screening, confirm runs on larger samples, local mutation.

    Quick survivors (estimate at most the best confirm estimate plus slack, or
    at most ``promotion_threshold`` when set) are re-scored at the confirm
    sample size. Mutations expand around the best confirmed vector.
    """

    def __init__(self, seed: PotentialSpec, stages: StageConfig | None = None):
        if seed.kind != "canonical":
            raise SearchConfigError("staged search needs a canonical seed")
        self.seed = seed
        self.cfg = stages or StageConfig()
        self.free = _free_positions(seed.n, self.cfg.frozen_point)
        if not self.free or not self.cfg.phases:
            raise SearchConfigError("empty mutation set: no free coefficients or no phases")
        self.phase = 0
        self.center = tuple(seed.coefs)
        self.best_confirm: tuple | None = None
        self.seen = {self.center}
        self.quick: list[tuple[tuple[int, ...], str]] = [(self.center, "seed")]
        if self.cfg.structured_seeds:
            for pos in self.free:
                for val in (1, -1):
                    c = list(self.center)
                    c[pos] = val
                    c = tuple(c)
                    if c not in self.seen:
                        self.seen.add(c)
                        self.quick.append((c, "sparse-seed"))
        self.promote: list[Candidate] = []
        self.confirmed: list[tuple[tuple, Candidate]] = []

    def _threshold(self) -> float:
        if self.cfg.promotion_threshold is not None:
            return self.cfg.promotion_threshold
        if self.best_confirm is None:
            return math.inf
        return self.best_confirm[0] + self.cfg.promotion_slack

    def _expand(self) -> None:
        while not self.quick and self.phase < len(self.cfg.phases):
            steps, bound = self.cfg.phases[self.phase]
            fresh = [c for c in _neighbors(self.center, self.free, steps, bound) if c not in self.seen]
            if fresh:
                self.seen.update(fresh)
                self.quick.extend((c, f"mutate/phase{self.phase}") for c in fresh)
            else:
                self.phase += 1

    def ask(self, limit: int) -> list[Candidate]:
        if self.promote:
            out, self.promote = self.promote[:limit], self.promote[limit:]
            return out
        self._expand()
        n = min(self.cfg.quick_batch, limit)
        take, self.quick = self.quick[:n], self.quick[n:]
        return [Candidate(self.seed.with_coefs(c), prov, "quick") for c, prov in take]

    def tell(self, results: list[Told]) -> None:
        recentre = False
        for t in results:
            if t.result is None:
                continue
            if t.candidate.stage == "quick":
                if t.result.estimate <= self._threshold():
                    self.promote.append(Candidate(t.candidate.spec, t.candidate.provenance, "confirm"))
            else:
                key = t.result.key() + (t.candidate.spec.key(),)
                self.confirmed.append((key, t.candidate))
                if self.best_confirm is None or key < self.best_confirm:
                    self.best_confirm = key
                    if tuple(t.candidate.spec.coefs) != self.center:
                        self.center = tuple(t.candidate.spec.coefs)
                        recentre = True
        self.confirmed.sort(key=lambda x: x[0])
        if recentre:
            self.phase = 0

    def final_candidates(self) -> list[Candidate]:
        top = [c for _, c in self.confirmed[: self.cfg.finalists]]
        return [Candidate(self.seed, "seed")] + top


def staged_coefficient_search(
    graph: WorkFunctionGraph,
    seed: PotentialSpec,
    c,
    stages: StageConfig | None = None,
    proxy: ProxyConfig | None = None,
    budget: Budget | None = None,
    workers: int | None = None,
) -> SearchOutcome:
    """Staged quick/confirm coefficient search around ``seed``'s index matrix."""
    family = StagedCoefficientSearch(seed, stages)
    evaluator = SearchEvaluator(graph, c, proxy, cache_stages=("confirm",))
    outcome = ask_tell_loop(family, evaluator, budget or Budget(), workers)
    outcome.notes = {
        "promotion_slack": family.cfg.promotion_slack,
        "promotion_threshold": family.cfg.promotion_threshold,
        "quick_sample_size": evaluator.proxy.sample_size,
        "confirm_sample_size": evaluator.proxy.confirm_sample_size,
        "defaults_are_conventions": True,
    }
    return outcome
