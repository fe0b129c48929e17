"""Work functions and the operators acting on them.

A work function is a plain integer vector ``w`` with ``w[i]`` the value at
configuration ``indexer.idx_to_config(i)``. :class:`WFContext` bundles the
metric, the indexer and the precomputed configuration matching distances that
every operator needs.
"""
from __future__ import annotations

from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import EvaluationContextError, InvalidRequestError
from .metric import ConfigIndexer, Configuration, MetricSpace, matching_matrix

# Work functions in a batched update are processed in blocks of this many rows.
_UPDATE_BLOCK_ELEMS = 1 << 22


class WFContext:
    """Metric instance plus the tables used to manipulate its work functions."""

    def __init__(self, space: MetricSpace, k: int):
        self.space = space
        self.k = k
        self.indexer = ConfigIndexer(k, space.m)

    def __repr__(self):
        return f"WFContext(k={self.k}, m={self.m}, kind={self.space.kind!r})"

    @property
    def m(self) -> int:
        return self.space.m

    @property
    def count(self) -> int:
        return self.indexer.count

    @property
    def dist(self) -> np.ndarray:
        return self.space.dist

    def config_to_idx(self, config: Sequence[int]) -> int:
        return self.indexer.config_to_idx(config)

    def idx_to_config(self, idx: int) -> Configuration:
        return self.indexer.idx_to_config(idx)

    @cached_property
    def matching(self) -> np.ndarray:
        """``count x count`` matrix of matching distances between configurations."""
        mat = matching_matrix(self.space, self.indexer)
        mat.setflags(write=False)
        return mat

    @cached_property
    def max_matching(self) -> int:
        return int(self.matching.max())

    @cached_property
    def containing(self) -> tuple[np.ndarray, ...]:
        """For each point ``r``, the indices of configurations that contain it."""
        configs = self.indexer.configs
        return tuple(np.flatnonzero((configs == r).any(axis=1)) for r in range(self.m))

    @cached_property
    def _update_tables(self) -> tuple[np.ndarray, ...]:
        # matching[:, containing[r]] as contiguous int32 blocks
        return tuple(
            np.ascontiguousarray(self.matching[:, c], dtype=np.int32) for c in self.containing
        )

    def check(self, w: np.ndarray) -> None:
        if w.shape[-1] != self.count:
            raise EvaluationContextError(
                f"work function has {w.shape[-1]} entries, context expects {self.count}"
            )

    def check_request(self, r: int) -> None:
        if not 0 <= r < self.m:
            raise InvalidRequestError(f"request {r} outside [0, {self.m})")

    def update_wf(self, wf: np.ndarray, r: int) -> np.ndarray:
        return update(self, wf, r)


def initial_work_function(ctx: WFContext, start: Sequence[int]) -> np.ndarray:
    """Work function of the empty request sequence starting from ``start``."""
    return ctx.matching[ctx.config_to_idx(start)].astype(np.int64)


def update(ctx: WFContext, w: np.ndarray, r: int) -> np.ndarray:
    """Apply ``T_r``: ``T_r(w)(X) = min over Y containing r of w(Y) + d(X, Y)``."""
    ctx.check_request(r)
    w = np.asarray(w)
    ctx.check(w)
    if w.ndim == 1:
        return update_many(ctx, w[None, :], r)[0]
    return update_many(ctx, w, r)


def update_many(ctx: WFContext, ws: np.ndarray, r: int) -> np.ndarray:
    """``T_r`` applied to each row of ``ws`` (shape ``batch x count``)."""
    ctx.check_request(r)
    cols = ctx.containing[r]
    table = ctx._update_tables[r]
    batch = ws.shape[0]
    out = np.empty((batch, ctx.count), dtype=np.int64)
    lo, hi = ws.min(initial=0), ws.max(initial=0)
    small = -(1 << 30) < lo and hi < (1 << 30) - ctx.max_matching
    step = max(1, _UPDATE_BLOCK_ELEMS // max(1, table.size))
    for start in range(0, batch, step):
        part = ws[start : start + step][:, cols]
        if small:
            part = part.astype(np.int32)
            out[start : start + step] = (part[:, None, :] + table[None, :, :]).min(axis=2)
        else:
            out[start : start + step] = (
                part.astype(np.int64)[:, None, :] + table[None, :, :].astype(np.int64)
            ).min(axis=2)
    return out


def extended_cost(ctx: WFContext, w: np.ndarray, r: int) -> int:
    """``max over X of T_r(w)(X) - w(X)``."""
    return int((update(ctx, w, r) - w).max())


def opt_increase(ctx: WFContext, w: np.ndarray, r: int) -> int:
    """Increase of the minimum caused by request ``r``."""
    return int(update(ctx, w, r).min() - np.min(w))


def normalize(w: np.ndarray) -> tuple[np.ndarray, int]:
    """Shift ``w`` so its minimum is 0; returns the shifted vector and the shift."""
    shift = int(np.min(w))
    return np.asarray(w, dtype=np.int64) - shift, shift


def wfa_step(
    ctx: WFContext, w_next: np.ndarray, current: Sequence[int], request: int | None = None
) -> Configuration:
    """Next configuration chosen by the work function algorithm.

    Minimizes ``w_next(Y) + d(current, Y)``; ties go to the lowest index.
    With ``request`` given, only configurations covering it are considered,
    so the returned configuration actually serves the request.
    """
    row = ctx.matching[ctx.config_to_idx(current)]
    cost = np.asarray(w_next) + row
    if request is None:
        return ctx.idx_to_config(int(np.argmin(cost)))
    ctx.check_request(request)
    cand = ctx.containing[request]
    return ctx.idx_to_config(int(cand[np.argmin(cost[cand])]))


def simulate(ctx: WFContext, requests: Sequence[int], start: Sequence[int]) -> dict:
    """Run the work function algorithm on a request sequence.

    Returns the WFA movement cost, the offline optimum, and the summed
    extended costs along the way.
    """
    w = initial_work_function(ctx, start)
    cur = ctx.indexer.canonical(start)
    wfa_cost = 0
    total_ext = 0
    for r in requests:
        nxt = update(ctx, w, r)
        total_ext += int((nxt - w).max())
        new_cur = wfa_step(ctx, nxt, cur, r)
        wfa_cost += int(ctx.matching[ctx.config_to_idx(cur), ctx.config_to_idx(new_cur)])
        cur = new_cur
        w = nxt
    return {"wfa": wfa_cost, "opt": int(w.min()), "extended_cost_sum": total_ext}
