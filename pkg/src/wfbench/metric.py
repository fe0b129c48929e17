"""Finite integer metric spaces, configurations and their dense indexing.

A configuration is a multiset of ``k`` points, stored as a sorted tuple. The
:class:`ConfigIndexer` maps configurations to dense indices in
``[0, C(m+k-1, k))`` using the colexicographic rank of the sorted multiset
(via the usual stars-and-bars shift ``x_j + j`` to a strict subset).
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidConfigurationError, InvalidIndexError, MetricError

Configuration = tuple[int, ...]

# Exhaustive permutation search is used up to this many servers.
MAX_PERMUTATION_K = 5


@dataclass(frozen=True, eq=False)
class MetricSpace:
    """Finite metric on points ``0..m-1`` with integer distances."""

    dist: np.ndarray
    antipode: tuple[int, ...] | None = None
    kind: str = "explicit"

    def __post_init__(self):
        d = np.array(self.dist, dtype=np.int64, copy=True)
        d.setflags(write=False)
        object.__setattr__(self, "dist", d)
        if self.antipode is not None:
            object.__setattr__(self, "antipode", tuple(int(a) for a in self.antipode))
        _validate_metric(d, self.antipode)

    @property
    def m(self) -> int:
        return self.dist.shape[0]

    @property
    def has_antipode(self) -> bool:
        return self.antipode is not None

    @cached_property
    def diameter(self) -> int:
        return int(self.dist.max())

    def __eq__(self, other):
        if not isinstance(other, MetricSpace):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.antipode == other.antipode
            and np.array_equal(self.dist, other.dist)
        )

    def __hash__(self):
        return hash((self.kind, self.antipode, self.dist.tobytes()))

    def is_circle(self) -> bool:
        return self.kind == "circle"


def _validate_metric(d: np.ndarray, antipode: Sequence[int] | None) -> None:
    if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] < 1:
        raise MetricError(f"distance matrix must be square, got shape {d.shape}")
    m = d.shape[0]
    if not np.array_equal(d, d.T):
        raise MetricError("distance matrix is not symmetric")
    if np.any(np.diag(d) != 0):
        raise MetricError("distance matrix has a nonzero diagonal entry")
    off = d[~np.eye(m, dtype=bool)]
    if np.any(off <= 0):
        raise MetricError("distinct points must be at positive distance")
    # d[i, j] <= d[i, l] + d[l, j] for every l
    via = (d[:, :, None] + d[None, :, :]).min(axis=1)
    if np.any(d > via):
        raise MetricError("distance matrix violates the triangle inequality")
    if antipode is not None:
        a = np.asarray(antipode, dtype=np.int64)
        if a.shape != (m,) or np.any(a < 0) or np.any(a >= m):
            raise MetricError("antipode map must send every point to a point")
        if np.any(a[a] != np.arange(m)):
            raise MetricError("antipode map is not an involution")
        if not np.array_equal(d[np.ix_(a, a)], d):
            raise MetricError("antipode map is not an isometry")


def make_circle(m: int) -> MetricSpace:
    """``m`` equidistant points on a circle of circumference ``m``."""
    if m < 2:
        raise MetricError(f"a circle discretization needs m >= 2, got {m}")
    i = np.arange(m)
    diff = np.abs(i[:, None] - i[None, :])
    dist = np.minimum(diff, m - diff)
    antipode = tuple((p + m // 2) % m for p in range(m)) if m % 2 == 0 else None
    return MetricSpace(dist, antipode, kind="circle")


def metric_to_json(space: MetricSpace, k: int) -> dict:
    if space.is_circle():
        return {"kind": "circle", "k": k, "m": space.m}
    return {
        "kind": "explicit",
        "k": k,
        "dist": space.dist.tolist(),
        "antipode": list(space.antipode) if space.antipode is not None else None,
    }


def metric_from_json(obj: dict) -> tuple[MetricSpace, int]:
    """Parse a metric definition, returning ``(space, k)``."""
    try:
        kind = obj["kind"]
        k = int(obj["k"])
        if kind == "circle":
            space = make_circle(int(obj["m"]))
        elif kind == "explicit":
            dist = np.asarray(obj["dist"])
            if dist.size and not np.issubdtype(dist.dtype, np.integer):
                raise MetricError("explicit distances must be integers")
            space = MetricSpace(dist.astype(np.int64), obj.get("antipode"))
        else:
            raise MetricError(f"unknown metric kind {kind!r}")
    except KeyError as exc:
        raise MetricError(f"metric definition is missing field {exc}") from None
    if k < 1:
        raise MetricError(f"server count must be positive, got {k}")
    return space, k


def load_metric(path: str | Path) -> tuple[MetricSpace, int]:
    with open(path) as fh:
        return metric_from_json(json.load(fh))


class ConfigIndexer:
    """Bijection between sorted k-multisets of ``range(m)`` and ``range(count)``."""

    def __init__(self, k: int, m: int):
        if k < 1 or m < 1:
            raise InvalidConfigurationError(f"need k >= 1 and m >= 1, got k={k}, m={m}")
        self.k = k
        self.m = m
        self.count = math.comb(m + k - 1, k)
        top = m + k
        self._binom = np.array(
            [[math.comb(n, j) for j in range(k + 1)] for n in range(top)], dtype=np.int64
        )

    def __repr__(self):
        return f"ConfigIndexer(k={self.k}, m={self.m}, count={self.count})"

    def __eq__(self, other):
        return isinstance(other, ConfigIndexer) and (self.k, self.m) == (other.k, other.m)

    def __hash__(self):
        return hash((self.k, self.m))

    def canonical(self, points: Iterable[int]) -> Configuration:
        config = tuple(sorted(int(p) for p in points))
        if len(config) != self.k:
            raise InvalidConfigurationError(
                f"configuration {config} has {len(config)} points, expected {self.k}"
            )
        if config and (config[0] < 0 or config[-1] >= self.m):
            raise InvalidConfigurationError(
                f"configuration {config} has a point outside [0, {self.m})"
            )
        return config

    def config_to_idx(self, config: Iterable[int]) -> int:
        config = self.canonical(config)
        return int(sum(self._binom[x + j, j + 1] for j, x in enumerate(config)))

    def idx_to_config(self, idx: int) -> Configuration:
        if not 0 <= idx < self.count:
            raise InvalidIndexError(f"index {idx} outside [0, {self.count})")
        r = int(idx)
        out = [0] * self.k
        n = self.m + self.k - 1
        for j in range(self.k, 0, -1):
            n -= 1
            while self._binom[n, j] > r:
                n -= 1
            r -= int(self._binom[n, j])
            out[j - 1] = n - (j - 1)
        return tuple(out)

    @cached_property
    def configs(self) -> np.ndarray:
        """``count x k`` array; row ``i`` is ``idx_to_config(i)``."""
        table = np.empty((self.count, self.k), dtype=np.int64)
        for config in itertools.combinations_with_replacement(range(self.m), self.k):
            table[self.config_to_idx(config)] = config
        table.setflags(write=False)
        return table

    def indices_of(self, configs: np.ndarray) -> np.ndarray:
        """Vectorized ``config_to_idx`` over the rows of an integer array.

        Rows need not be sorted; each is treated as a multiset.
        """
        arr = np.sort(np.asarray(configs, dtype=np.int64), axis=-1)
        if arr.shape[-1] != self.k:
            raise InvalidConfigurationError(f"rows must have {self.k} points")
        if arr.size and (arr.min() < 0 or arr.max() >= self.m):
            raise InvalidConfigurationError(f"point outside [0, {self.m})")
        out = np.zeros(arr.shape[:-1], dtype=np.int64)
        for j in range(self.k):
            out += self._binom[arr[..., j] + j, j + 1]
        return out


def matching_distance(space: MetricSpace, x: Sequence[int], y: Sequence[int]) -> int:
    """Minimum-cost perfect matching between two equal-size multisets."""
    if len(x) != len(y):
        raise InvalidConfigurationError(f"configurations differ in size: {len(x)} vs {len(y)}")
    for p in itertools.chain(x, y):
        if not 0 <= p < space.m:
            raise InvalidConfigurationError(f"point {p} outside [0, {space.m})")
    if len(x) == 0:
        return 0
    cost = space.dist[np.ix_(list(x), list(y))]
    if len(x) <= MAX_PERMUTATION_K:
        rows = np.arange(len(x))
        return int(min(cost[rows, list(p)].sum() for p in itertools.permutations(range(len(y)))))
    return _assignment_cost(cost)


def _assignment_cost(cost: np.ndarray) -> int:
    from scipy.optimize import linear_sum_assignment

    rows, cols = linear_sum_assignment(cost)
    return int(cost[rows, cols].sum())


def matching_matrix(space: MetricSpace, indexer: ConfigIndexer) -> np.ndarray:
    """All-pairs matching distances between configurations, indexed densely."""
    if indexer.m != space.m:
        raise InvalidConfigurationError("indexer and metric disagree on the point count")
    configs = indexer.configs
    k = indexer.k
    if k > MAX_PERMUTATION_K:
        n = indexer.count
        out = np.empty((n, n), dtype=np.int64)
        for i in range(n):
            for j in range(i, n):
                c = _assignment_cost(space.dist[np.ix_(configs[i], configs[j])])
                out[i, j] = out[j, i] = c
        return out
    d = space.dist
    best = None
    for perm in itertools.permutations(range(k)):
        total = np.zeros((indexer.count, indexer.count), dtype=np.int64)
        for a, b in enumerate(perm):
            total += d[configs[:, a][:, None], configs[:, b][None, :]]
        best = total if best is None else np.minimum(best, total)
    return best
