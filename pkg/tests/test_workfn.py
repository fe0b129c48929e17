import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import configurations, matching, work_update
from wfbench.errors import EvaluationContextError, InvalidRequestError
from wfbench.metric import make_circle
from wfbench.workfn import (
    WFContext,
    extended_cost,
    initial_work_function,
    normalize,
    opt_increase,
    simulate,
    update,
    update_many,
    wfa_step,
)


def ctx_for(k, m):
    return WFContext(make_circle(m), k)


def as_dict(ctx, w):
    return {ctx.idx_to_config(i): int(v) for i, v in enumerate(w)}


def test_initial_work_function():
    ctx = ctx_for(3, 6)
    w = initial_work_function(ctx, (0, 0, 0))
    assert w[ctx.config_to_idx((0, 0, 0))] == 0
    assert w[ctx.config_to_idx((3, 3, 3))] == 9
    ctx2 = ctx_for(2, 4)
    assert initial_work_function(ctx2, (0, 0))[ctx2.config_to_idx((0, 2))] == 2


def test_update_small_cases_against_brute_force():
    ctx = ctx_for(2, 4)
    w = initial_work_function(ctx, (0, 0))
    nxt = update(ctx, w, 2)
    assert nxt[ctx.config_to_idx((0, 2))] == 2
    assert nxt[ctx.config_to_idx((2, 2))] == 4
    assert as_dict(ctx, nxt) == work_update(2, 4, as_dict(ctx, w), 2)


def test_extended_cost_and_opt_increase_examples():
    # exhaustive check over all ten configurations: T_2(w0)({0,0}) = 4 against w0 = 0
    ctx = ctx_for(2, 4)
    w = initial_work_function(ctx, (0, 0))
    assert extended_cost(ctx, w, 2) == 4
    assert opt_increase(ctx, w, 2) == 2
    ctx1 = ctx_for(1, 4)
    assert opt_increase(ctx1, initial_work_function(ctx1, (0,)), 2) == 2
    ctx3 = ctx_for(3, 6)
    const = np.full(ctx3.count, 5, dtype=np.int64)
    assert extended_cost(ctx3, const, 0) == 3
    once = update(ctx3, const, 0)
    assert extended_cost(ctx3, once, 0) == 0


def test_normalize():
    w = np.array([3, 5, 4])
    assert normalize(w)[1] == 3 and list(normalize(w)[0]) == [0, 2, 1]
    z, s = normalize(np.full(5, 7))
    assert s == 7 and not z.any()
    n, s = normalize(normalize(w)[0])
    assert s == 0


def test_wfa_step_examples():
    ctx = ctx_for(3, 6)
    w0 = initial_work_function(ctx, (0, 0, 0))
    assert wfa_step(ctx, w0, (0, 0, 0)) == (0, 0, 0)
    ctx1 = ctx_for(1, 4)
    nxt = update(ctx1, initial_work_function(ctx1, (0,)), 2)
    # unrestricted: w_next(Y) + d(0, Y) is 4 for every singleton; the lowest index wins
    assert wfa_step(ctx1, nxt, (0,)) == (0,)
    # restricted to configurations covering the request
    assert wfa_step(ctx1, nxt, (0,), request=2) == (2,)


def test_context_errors():
    ctx = ctx_for(2, 4)
    with pytest.raises(EvaluationContextError):
        update(ctx, np.zeros(9, dtype=np.int64), 0)
    with pytest.raises(InvalidRequestError):
        update(ctx, np.zeros(ctx.count, dtype=np.int64), 4)


def random_work_function(ctx, rng, steps):
    w = initial_work_function(ctx, tuple(rng.integers(0, ctx.m, ctx.k)))
    for r in rng.integers(0, ctx.m, steps):
        w = update(ctx, w, int(r))
    return w + int(rng.integers(-5, 6))


@pytest.mark.parametrize("k,m", [(1, 5), (2, 4), (2, 6), (3, 5), (3, 6)])
def test_operator_properties_on_random_cases(k, m):
    ctx = ctx_for(k, m)
    rng = np.random.default_rng(k * 100 + m)
    mat = ctx.matching
    for _ in range(1000):
        w = random_work_function(ctx, rng, int(rng.integers(0, 6)))
        r = int(rng.integers(0, m))
        t = update(ctx, w, r)
        alpha = int(rng.integers(-20, 21))
        assert np.array_equal(update(ctx, w + alpha, r), t + alpha)
        bump = w + rng.integers(0, 3, w.size)
        assert np.all(update(ctx, bump, r) >= t)
        # Lipschitz in the matching metric
        assert np.all(t[:, None] - t[None, :] <= mat)
        assert np.array_equal(update(ctx, t, r), t)
        assert np.all(t >= w)
        # normalized values never exceed the largest matching distance
        assert normalize(t)[0].max() <= ctx.max_matching
        assert np.all(t[ctx.containing[r]] == w[ctx.containing[r]])


def test_update_many_matches_single_updates():
    ctx = ctx_for(3, 6)
    rng = np.random.default_rng(3)
    ws = np.stack([random_work_function(ctx, rng, 4) for _ in range(40)])
    for r in range(6):
        batch = update_many(ctx, ws, r)
        for i in range(ws.shape[0]):
            assert np.array_equal(batch[i], update(ctx, ws[i], r))


def test_update_matches_exhaustive_oracle():
    k, m = 2, 5
    ctx = ctx_for(k, m)
    rng = np.random.default_rng(11)
    for _ in range(30):
        w = random_work_function(ctx, rng, 3)
        r = int(rng.integers(0, m))
        assert as_dict(ctx, update(ctx, w, r)) == work_update(k, m, as_dict(ctx, w), r)


@settings(max_examples=150, deadline=None)
@given(
    seq=st.lists(st.integers(0, 5), min_size=1, max_size=12),
    start=st.lists(st.integers(0, 5), min_size=3, max_size=3),
    alpha=st.integers(-50, 50),
)
def test_shift_invariance_hypothesis(seq, start, alpha):
    ctx = ctx_for(3, 6)
    w = initial_work_function(ctx, start)
    for r in seq[:-1]:
        w = update(ctx, w, r)
    r = seq[-1]
    assert extended_cost(ctx, w + alpha, r) == extended_cost(ctx, w, r)
    assert opt_increase(ctx, w + alpha, r) == opt_increase(ctx, w, r)
    nw, _ = normalize(w)
    assert normalize(update(ctx, w, r))[1] - normalize(w)[1] == opt_increase(ctx, w, r)
    assert opt_increase(ctx, w, r) <= extended_cost(ctx, w, r)


def wfa_oracle(k, m, requests, start):
    """Reference WFA run with dict work functions and a covering-configuration argmin."""
    cfgs = configurations(k, m)
    w = {x: matching(m, tuple(start), x) for x in cfgs}
    cur = tuple(sorted(start))
    cost = ext = 0
    for r in requests:
        nxt = work_update(k, m, w, r)
        ext += max(nxt[x] - w[x] for x in cfgs)
        best = min((nxt[y] + matching(m, cur, y), i, y) for i, y in enumerate(cfgs) if r in y)
        cost += matching(m, cur, best[2])
        cur = best[2]
        w = nxt
    return {"wfa": cost, "opt": min(w.values()), "extended_cost_sum": ext}


def test_simulate_matches_reference_run():
    rng = np.random.default_rng(5)
    for k, m in [(2, 4), (2, 5), (1, 6)]:
        ctx = ctx_for(k, m)
        for _ in range(5):
            reqs = [int(x) for x in rng.integers(0, m, 10)]
            start = tuple(int(x) for x in rng.integers(0, m, k))
            assert simulate(ctx, reqs, start) == wfa_oracle(k, m, reqs, start)


@pytest.mark.parametrize("k,m", [(2, 4), (2, 6), (3, 5), (3, 6)])
def test_simulation_inequality(k, m):
    ctx = ctx_for(k, m)
    rng = np.random.default_rng(1000 + 10 * k + m)
    for _ in range(100):
        reqs = [int(x) for x in rng.integers(0, m, 30)]
        start = tuple(int(x) for x in rng.integers(0, m, k))
        out = simulate(ctx, reqs, start)
        assert out["opt"] + out["wfa"] <= out["extended_cost_sum"]
