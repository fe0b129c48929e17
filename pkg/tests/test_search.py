import itertools

import numpy as np
import pytest

from oracles import canonical_values, violation_scan
from wfbench.errors import SearchConfigError
from wfbench.graph import build_graph
from wfbench.metric import make_circle
from wfbench.metrics import evaluate
from wfbench.potential import builtin, canonical_spec, compile_potential
from wfbench.search import (
    Budget,
    Candidate,
    CoefficientLocalSearch,
    HardEdgeCache,
    NaiveFamily,
    ProxyConfig,
    SearchEvaluator,
    StageConfig,
    StagedCoefficientSearch,
    SweepFamily,
    ask_tell_loop,
    proxy_score,
    staged_coefficient_search,
)
from wfbench.workfn import WFContext

TOY_MATRIX = ((1, 2), (1, 3), (2, 3))

# Exhaustive {-1,0,1} sweep of the unifying(4) index matrix on circle k=4, m=6, c=4
# (729 coefficient vectors, exact evaluation): best, worst, total violations and
# the number of zero-violation vectors.
K4M6_SWEEP_BASELINE = {"best": 0, "worst": 372, "total": 98592, "perfect": 95}


def full_proxy(graph, **kw):
    return ProxyConfig(sample_size=graph.num_edges, early_stop_violations=None, **kw)


def random_spec(rng, k, n):
    rows = int(rng.integers(2, 5))
    matrix = [[int(x) * int(rng.choice([-1, 1])) for x in rng.integers(1, n + 1, k)] for _ in range(rows)]
    return canonical_spec(n, matrix, rng.integers(-2, 3, n * (n - 1) // 2))


def test_full_proxy_equals_exact_on_random_specs(g36):
    rng = np.random.default_rng(42)
    for _ in range(10):
        spec = random_spec(rng, 3, int(rng.integers(2, 5)))
        pot = compile_potential(g36.ctx, spec)
        res = proxy_score(g36, pot, 3, full_proxy(g36))
        assert res.estimate == evaluate(g36, pot, 3).violations_k
        assert not res.stopped_early and res.checked == g36.num_edges
        assert res.nodes_evaluated <= g36.num_nodes


def test_proxy_basic_contracts(g36):
    proxy = ProxyConfig(sample_size=500, early_stop_violations=None, rng_seed=9)
    perfect = compile_potential(g36.ctx, builtin("unifying", 3))
    assert proxy_score(g36, perfect, 3, proxy).estimate == 0
    const = compile_potential(g36.ctx, builtin("constant"))
    a = proxy_score(g36, const, 3, proxy, serial=4)
    b = proxy_score(g36, const, 3, proxy, serial=4)
    assert (a.estimate, a.violated) == (b.estimate, b.violated)
    assert a.estimate <= evaluate(g36, const, 3).violations_k
    stop = ProxyConfig(sample_size=2000, early_stop_violations=5)
    res = proxy_score(g36, const, 3, stop)
    assert res.estimate == 5 and res.stopped_early


def test_hard_cache_is_checked_first_and_only_counts_real_violations(g36):
    const = compile_potential(g36.ctx, builtin("constant"))
    bad = np.flatnonzero(g36.grad > 4 * g36.dopt)[:10]
    good = np.flatnonzero(g36.grad <= 4 * g36.dopt)[:10]
    cache = HardEdgeCache(64)
    cache.add(list(good) + list(bad))
    res = proxy_score(g36, const, 3, ProxyConfig(sample_size=0, early_stop_violations=None), cache)
    assert sorted(res.violated) == sorted(bad.tolist())
    perfect = compile_potential(g36.ctx, builtin("unifying", 3))
    assert proxy_score(g36, perfect, 3, ProxyConfig(sample_size=0), cache).estimate == 0


def test_hard_cache_recency_eviction():
    cache = HardEdgeCache(3)
    cache.add([1, 2, 3])
    cache.add([1])
    cache.add([4])
    assert list(cache.edges()) == [4, 1, 3]
    assert 2 not in cache and len(cache) == 3


def test_proxy_config_validation():
    with pytest.raises(SearchConfigError):
        ProxyConfig(hard_cache_capacity=0).validate()
    with pytest.raises(SearchConfigError):
        ProxyConfig(sample_size=5000).validate(edges_total=2100)
    ProxyConfig(early_stop_violations=0).validate()


def test_naive_family_equals_full_evaluation(g36):
    seed = builtin("huang-zhang-k3")
    out = ask_tell_loop(NaiveFamily(seed), SearchEvaluator(g36, 3), Budget(10), workers=1)
    assert out.best.spec == seed
    assert out.best_report.dumps() == evaluate(g36, compile_potential(g36.ctx, seed), 3).dumps()
    assert out.evaluations == 1


def test_zero_budget_returns_the_evaluated_seed(g36):
    seed = builtin("unifying", 3)
    family = CoefficientLocalSearch(seed)
    out = ask_tell_loop(family, SearchEvaluator(g36, 3), Budget(0), workers=1)
    assert out.evaluations == 0 and out.exact_evaluations == 1
    assert out.best.spec == seed and out.best_report.violations_k == 0


def test_coefficient_local_search_keeps_zero(g36):
    out = ask_tell_loop(
        CoefficientLocalSearch(builtin("unifying", 3)), SearchEvaluator(g36, 3), Budget(60), workers=2
    )
    assert out.best_report.violations_k == 0


def test_local_search_improves_a_bad_seed(g36):
    seed = builtin("huang-zhang-k3").with_coefs([0, 0, 0, -1, -1, -1])
    base = evaluate(g36, compile_potential(g36.ctx, seed), 3).violations_k
    out = ask_tell_loop(CoefficientLocalSearch(seed), SearchEvaluator(g36, 3), Budget(200), workers=1)
    assert base > 0 and out.best_report.violations_k < base


def test_staged_search_from_unifying(g36):
    out = staged_coefficient_search(
        g36, builtin("unifying", 3), 3, budget=Budget(300), workers=1
    )
    assert out.best_report.violations_k == 0
    assert out.exact_evaluations <= 100
    assert out.notes["defaults_are_conventions"]


def test_staged_promotion_threshold_zero(g36):
    seed = builtin("huang-zhang-k3").with_coefs([0, 0, 0, -1, -1, -1])
    fam = StagedCoefficientSearch(seed, StageConfig(promotion_threshold=0))
    evaluator = SearchEvaluator(g36, 3, ProxyConfig(sample_size=2100, confirm_sample_size=2100))
    out = ask_tell_loop(fam, evaluator, Budget(120), workers=1)
    quick = {tuple(h["coefs"]): h["estimate"] for h in out.history if h["stage"] == "quick"}
    for h in out.history:
        if h["stage"] == "confirm":
            assert quick[tuple(h["coefs"])] == 0


def test_staged_freeze_and_empty_mutation_set():
    seed = canonical_spec(2, [[1, 2]])
    with pytest.raises(SearchConfigError):
        StagedCoefficientSearch(seed, StageConfig(frozen_point=1))
    with pytest.raises(SearchConfigError):
        CoefficientLocalSearch(seed, phases=())
    hz = builtin("huang-zhang-k3")
    fam = StagedCoefficientSearch(hz, StageConfig(frozen_point=1))
    for cand in fam.ask(100):
        assert cand.spec.coefs[:3] == hz.coefs[:3]


def test_malformed_candidates_are_told_back(g36):
    class Sloppy(NaiveFamily):
        def __init__(self, seed):
            super().__init__(seed)
            self.told = []

        def ask(self, limit):
            if self._asked:
                return []
            self._asked = True
            return [Candidate(canonical_spec(2, [[1, 7, 1]]), "broken"), Candidate(self.seed, "seed")]

        def tell(self, results):
            self.told.extend(results)

    fam = Sloppy(builtin("unifying", 3))
    out = ask_tell_loop(fam, SearchEvaluator(g36, 3), Budget(5), workers=1)
    assert fam.told[0].error and fam.told[1].result is not None
    assert "error" in out.history[0] and out.best_report.violations_k == 0


def test_determinism_and_worker_independence(g36):
    seed = builtin("huang-zhang-k3").with_coefs([0, 0, 0, -1, -1, -1])
    proxy = ProxyConfig(sample_size=800, confirm_sample_size=1600)

    def run(workers):
        out = staged_coefficient_search(g36, seed, 3, proxy=ProxyConfig(**vars(proxy)), budget=Budget(80), workers=workers)
        data = out.to_json()
        data["budget_used"].pop("wall_time_s")
        return data

    one, again, many = run(1), run(1), run(4)
    assert one == again
    assert many["best"] == one["best"]


def toy_graph():
    return build_graph(WFContext(make_circle(4), 2))


@pytest.mark.parametrize("c", [1, 2])
def test_toy_sweep_matches_brute_force(c):
    g = toy_graph()
    edges = [(int(g.edge_u[e]), int(g.edge_v[e]), int(g.grad[e]), int(g.dopt[e])) for e in range(g.num_edges)]
    brute = []
    for coefs in itertools.product((-1, 0, 1), repeat=3):
        cm = [[0, coefs[0], coefs[1]], [coefs[0], 0, coefs[2]], [coefs[1], coefs[2], 0]]
        vals = canonical_values(2, 4, TOY_MATRIX, cm, g.nodes)
        count, l1 = violation_scan(edges, vals, c)
        brute.append((count, l1, coefs))
    best = min(brute)
    seed = canonical_spec(3, TOY_MATRIX)
    out = ask_tell_loop(SweepFamily(seed, keep=27), SearchEvaluator(g, c, full_proxy(g)), Budget(100), workers=1)
    assert out.evaluations == 27
    assert out.best_report.violations_k == best[0]
    assert float(best[1]) == pytest.approx(out.best_report.violations_k_l1)
    tied = {b[2] for b in brute if b[:2] == best[:2]}
    assert tuple(out.best.spec.coefs) in tied
    if c == 2:
        assert tied == {(1, 1, 1)}


def test_k4m6_unifying_matrix_sweep_baseline(g46):
    seed = builtin("unifying", 4)
    out = ask_tell_loop(
        SweepFamily(seed), SearchEvaluator(g46, 4, full_proxy(g46)), Budget(1000), workers=2
    )
    est = [h["estimate"] for h in out.history]
    assert len(est) == 729
    got = {"best": min(est), "worst": max(est), "total": sum(est), "perfect": est.count(0)}
    assert got == K4M6_SWEEP_BASELINE
    assert out.best_report.violations_k == K4M6_SWEEP_BASELINE["best"]
