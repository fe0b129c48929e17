"""Potential functions over work functions.

Every potential is a callable ``phi(wf) -> number`` on a work-function vector,
with an ``evaluate_many`` for row batches. The canonical family

    phi(w) = min over a_1..a_n of  sum_rows w(a_I[row, 0], ..., a_I[row, k-1])
                                    - sum_{i<j} C[i, j] * d(a_i, a_j)

is compiled into a table of configuration indices (one row per assignment of
the auxiliary points) and a penalty vector, so evaluation is a gather, a sum
and a min. Index ``-i`` stands for the antipode of ``a_i``.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CompileBudgetError, EvaluationContextError, PotentialSpecError
from .workfn import WFContext

DEFAULT_COMPILE_BUDGET = 2 << 30  # bytes
_GATHER_BLOCK_ELEMS = 1 << 23
_STREAM_BLOCK = 1 << 15


@dataclass(frozen=True)
class PotentialSpec:
    """Declarative description of a potential.

    ``kind`` is ``canonical``, ``sum``, ``constant`` or ``external``. Canonical
    coefficients are the upper triangle of the symmetric pair matrix, packed
    row-major: ``C[1,2], C[1,3], ..., C[1,n], C[2,3], ...``.
    """

    kind: str
    n: int = 0
    index_matrix: tuple[tuple[int, ...], ...] = ()
    coefs: tuple[int, ...] = ()
    name: str | None = None
    value: float = 0
    cmd: tuple[str, ...] = ()
    timeout_ms: int = 10_000

    @property
    def rows(self) -> int:
        return len(self.index_matrix)

    def coef_matrix(self) -> np.ndarray:
        """Symmetric ``n x n`` coefficient matrix."""
        c = np.zeros((self.n, self.n), dtype=np.int64)
        iu = np.triu_indices(self.n, 1)
        c[iu] = self.coefs
        return c + c.T

    def with_coefs(self, coefs: Sequence[int], name: str | None = None) -> "PotentialSpec":
        return PotentialSpec(
            kind=self.kind,
            n=self.n,
            index_matrix=self.index_matrix,
            coefs=tuple(int(x) for x in coefs),
            name=name,
        )

    def to_json(self) -> dict:
        if self.kind == "canonical":
            out = {
                "kind": "canonical",
                "n": self.n,
                "index_matrix": [list(r) for r in self.index_matrix],
                "coefs": list(self.coefs),
            }
        elif self.kind == "sum":
            out = {"kind": "sum"}
        elif self.kind == "constant":
            out = {"kind": "constant", "value": self.value}
        elif self.kind == "external":
            out = {"kind": "external", "cmd": list(self.cmd), "timeout_ms": self.timeout_ms}
        else:
            raise PotentialSpecError(f"unknown potential kind {self.kind!r}")
        if self.name:
            out["name"] = self.name
        return out

    def key(self) -> str:
        """Stable serialization used for deterministic tie-breaking."""
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))


def coef_vector(matrix: Sequence[Sequence[int]]) -> tuple[int, ...]:
    """Pack a symmetric coefficient matrix into its upper-triangle vector."""
    c = np.asarray(matrix, dtype=np.int64)
    if c.shape[0] != c.shape[1] or not np.array_equal(c, c.T):
        raise PotentialSpecError("coefficient matrix must be square and symmetric")
    return tuple(int(x) for x in c[np.triu_indices(c.shape[0], 1)])


def canonical_spec(
    n: int, index_matrix: Sequence[Sequence[int]], coefs: Sequence[int] | None = None, name=None
) -> PotentialSpec:
    coefs = tuple(int(x) for x in coefs) if coefs is not None else (0,) * math.comb(n, 2)
    return PotentialSpec(
        kind="canonical",
        n=int(n),
        index_matrix=tuple(tuple(int(x) for x in row) for row in index_matrix),
        coefs=coefs,
        name=name,
    )


def unifying_matrix(k: int) -> list[list[int]]:
    """The ``(k+1) x k`` staircase: row i repeats ``-i`` i times, then ``i+1..k``."""
    rows = [list(range(1, k + 1))]
    for i in range(1, k + 1):
        rows.append([-i] * i + list(range(i + 1, k + 1)))
    return rows


def _registry() -> dict[str, PotentialSpec]:
    hz = canonical_spec(
        4,
        [[-1, -1, -1], [1, 2, -3], [1, 3, -4], [1, 4, -2]],
        coef_vector([[0, 0, 0, 0], [0, 0, 1, 1], [0, 1, 0, 1], [0, 1, 1, 0]]),
        name="huang-zhang-k3",
    )
    kcomp = canonical_spec(
        5,
        [[-5, -5, -5, -5], [5, -1, -2, -2], [5, 1, 3, 4], [5, 2, -4, -4], [5, 2, 4, -3]],
        coef_vector(
            [
                [0, -1, 0, -1, 0],
                [-1, 0, 1, 0, 0],
                [0, 1, 0, -1, 0],
                [-1, 0, -1, 0, 0],
                [0, 0, 0, 0, 0],
            ]
        ),
        name="codex-k4-kcomp",
    )
    k1comp = canonical_spec(
        4,
        [
            [1, 2, 3, 4],
            [1, 2, 3, 4],
            [-1, 2, 3, 4],
            [-2, -2, 3, 4],
            [-3, -3, -3, 4],
            [-4, -4, -4, -4],
        ],
        name="codex-k4-k1comp",
    )
    shinka = canonical_spec(
        5,
        unifying_matrix(4),
        coef_vector(
            [
                [0, 1, -1, -1, -1],
                [1, 0, -1, -1, -1],
                [-1, -1, 0, 1, 1],
                [-1, -1, 1, 0, 1],
                [-1, -1, 1, 1, 0],
            ]
        ),
        name="shinka-unifying-k4",
    )
    return {
        s.name: s for s in (hz, kcomp, k1comp, shinka, PotentialSpec(kind="sum", name="sum"))
    }


BUILTIN_NAMES = ("unifying", "huang-zhang-k3", "codex-k4-kcomp", "codex-k4-k1comp",
                 "shinka-unifying-k4", "sum", "constant")
_UNIFYING = re.compile(r"^unifying(?:\((\d+)\)|-(\d+))?$")


def builtin(name: str, k: int | None = None) -> PotentialSpec:
    """Look up a named potential.

    ``unifying`` takes its server count from ``k`` unless written as
    ``unifying(3)`` or ``unifying-3``. ``constant`` is the zero potential.
    """
    match = _UNIFYING.match(name)
    if match:
        given = match.group(1) or match.group(2)
        kk = int(given) if given else k
        if kk is None:
            raise PotentialSpecError("unifying needs a server count: use unifying(k)")
        return canonical_spec(kk, unifying_matrix(kk), name=f"unifying({kk})")
    if name == "constant":
        return PotentialSpec(kind="constant", name="constant")
    try:
        return _registry()[name]
    except KeyError:
        raise PotentialSpecError(
            f"unknown builtin potential {name!r}; known: {', '.join(BUILTIN_NAMES)}"
        ) from None


def spec_from_json(obj: dict, k: int | None = None) -> PotentialSpec:
    kind = obj.get("kind")
    if kind == "builtin":
        return builtin(obj["name"], k)
    if kind == "canonical":
        n = int(obj["n"])
        coefs = obj.get("coefs")
        return canonical_spec(n, obj["index_matrix"], coefs, name=obj.get("name"))
    if kind == "sum":
        return PotentialSpec(kind="sum", name=obj.get("name"))
    if kind == "constant":
        return PotentialSpec(kind="constant", value=obj.get("value", 0), name=obj.get("name"))
    if kind == "external":
        cmd = obj.get("cmd")
        if not cmd or not all(isinstance(c, str) for c in cmd):
            raise PotentialSpecError("external potential needs a non-empty string list 'cmd'")
        return PotentialSpec(
            kind="external",
            cmd=tuple(cmd),
            timeout_ms=int(obj.get("timeout_ms", 10_000)),
            name=obj.get("name"),
        )
    raise PotentialSpecError(f"unknown potential kind {kind!r}")


def load_spec(source: str | Path, k: int | None = None) -> PotentialSpec:
    """Read a spec from a JSON file, or ``builtin:NAME``."""
    text = str(source)
    if text.startswith("builtin:"):
        return builtin(text[len("builtin:") :], k)
    with open(source) as fh:
        return spec_from_json(json.load(fh), k)


def validate_spec(
    spec: PotentialSpec, ctx: WFContext | None = None, restricted: bool = False
) -> None:
    """Raise :class:`PotentialSpecError` if ``spec`` cannot be used (on ``ctx``).

    ``restricted`` additionally enforces the older structural form: one row of
    all ``-1``, index ``1`` in every other row, no coefficient touching point 1.
    """
    if spec.kind != "canonical":
        if spec.kind not in ("sum", "constant", "external"):
            raise PotentialSpecError(f"unknown potential kind {spec.kind!r}")
        return
    n = spec.n
    if n < 1:
        raise PotentialSpecError(f"canonical potential needs n >= 1, got {n}")
    if not spec.index_matrix:
        raise PotentialSpecError("index matrix has no rows")
    widths = {len(row) for row in spec.index_matrix}
    if len(widths) != 1:
        raise PotentialSpecError("index matrix rows differ in length")
    flat = [x for row in spec.index_matrix for x in row]
    if any(x == 0 for x in flat):
        raise PotentialSpecError("index matrix entries must be nonzero")
    if any(abs(x) > n for x in flat):
        raise PotentialSpecError(f"index matrix entry exceeds n={n} in absolute value")
    if len(spec.coefs) != math.comb(n, 2):
        raise PotentialSpecError(
            f"expected {math.comb(n, 2)} pair coefficients for n={n}, got {len(spec.coefs)}"
        )
    if restricted:
        rows = spec.index_matrix
        anchor = [i for i, row in enumerate(rows) if all(x == -1 for x in row)]
        if not anchor:
            raise PotentialSpecError("restricted form needs a row of all -1")
        if any(1 not in row for i, row in enumerate(rows) if i != anchor[0]):
            raise PotentialSpecError("restricted form needs index 1 in every other row")
        if any(spec.coefs[: n - 1]):
            raise PotentialSpecError("restricted form forbids coefficients involving point 1")
    if ctx is not None:
        if widths.pop() != ctx.k:
            raise PotentialSpecError(f"index matrix rows must have k={ctx.k} entries")
        if any(x < 0 for x in flat) and not ctx.space.has_antipode:
            raise PotentialSpecError(
                "negative indices refer to antipodes, which this metric does not define"
            )


class Potential:
    """Base class: subclasses implement ``evaluate_many``.

    ``shift_slope`` is the exact growth under ``w + alpha`` when known
    (``phi(w + alpha) = phi(w) + shift_slope * alpha``), else ``None``.
    """

    shift_slope: float | None = None
    integral = True

    def __init__(self, ctx: WFContext):
        self.ctx = ctx

    def __call__(self, wf: np.ndarray):
        return self.evaluate_many(np.asarray(wf)[None, :])[0]

    def evaluate_many(self, ws: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def _check(self, ws: np.ndarray) -> None:
        if ws.ndim != 2 or ws.shape[1] != self.ctx.count:
            raise EvaluationContextError(
                f"work functions have shape {ws.shape}, expected (*, {self.ctx.count})"
            )


class SumPotential(Potential):
    def __init__(self, ctx: WFContext):
        super().__init__(ctx)
        self.shift_slope = ctx.count

    def evaluate_many(self, ws):
        ws = np.asarray(ws)
        self._check(ws)
        return ws.astype(np.int64).sum(axis=1)


class ConstantPotential(Potential):
    shift_slope = 0

    def __init__(self, ctx: WFContext, value=0):
        super().__init__(ctx)
        self.value = value
        self.integral = float(value).is_integer()

    def evaluate_many(self, ws):
        ws = np.asarray(ws)
        self._check(ws)
        dtype = np.int64 if self.integral else np.float64
        return np.full(ws.shape[0], self.value, dtype=dtype)


class TablePotential(Potential):
    """Lookup table keyed by normalized work-function vectors (e.g. a Bellman-Ford solution).

    Inputs are normalized before lookup. With ``shift_slope`` given, an input
    ``w`` evaluates to ``table[w - min w] + shift_slope * min w`` (for a
    Bellman potential at ratio ``c`` that slope is ``c + 1``); without it only
    normalized inputs are accepted. Vectors absent from the table raise ``KeyError``.
    """

    def __init__(
        self,
        ctx: WFContext,
        vectors: np.ndarray,
        values: Sequence,
        integral=True,
        shift_slope: float | None = None,
    ):
        super().__init__(ctx)
        self._table = {
            np.asarray(v, dtype=np.int32).tobytes(): val for v, val in zip(vectors, values)
        }
        self.integral = integral and (shift_slope is None or float(shift_slope).is_integer())
        self.shift_slope = shift_slope

    def evaluate_many(self, ws):
        ws = np.asarray(ws, dtype=np.int64)
        self._check(ws)
        shifts = ws.min(axis=1)
        if shifts.any() and self.shift_slope is None:
            raise EvaluationContextError("table potential without a shift slope needs normalized inputs")
        norm = (ws - shifts[:, None]).astype(np.int32)
        vals = np.asarray(
            [self._table[row.tobytes()] for row in norm],
            dtype=np.int64 if self.integral else np.float64,
        )
        if self.shift_slope is not None:
            vals = vals + (int(self.shift_slope) if self.integral else self.shift_slope) * shifts
        return vals


def _assignments(m: int, n: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Odometer-ordered assignments ``(a_1..a_n)``, ``a_n`` fastest, rows ``start:stop``."""
    total = m**n
    stop = total if stop is None else min(stop, total)
    flat = np.arange(start, stop, dtype=np.int64)
    out = np.empty((flat.size, n), dtype=np.int64)
    for j in range(n - 1, -1, -1):
        out[:, j] = flat % m
        flat //= m
    return out


def _resolve(ctx: WFContext, spec: PotentialSpec, points: np.ndarray):
    """Configuration indices (``A x h``) and penalties (``A``) for assignment rows."""
    space = ctx.space
    anti = np.asarray(space.antipode) if space.antipode is not None else None
    index = np.asarray(spec.index_matrix, dtype=np.int64)
    cols = np.abs(index) - 1
    chosen = points[:, cols]  # A x h x k
    neg = index < 0
    if neg.any():
        chosen = np.where(neg[None, :, :], anti[chosen], chosen)
    table = ctx.indexer.indices_of(chosen)
    penalty = np.zeros(points.shape[0], dtype=np.int64)
    cmat = spec.coef_matrix()
    for i, j in zip(*np.triu_indices(spec.n, 1)):
        if cmat[i, j]:
            penalty += cmat[i, j] * space.dist[points[:, i], points[:, j]]
    return table, penalty


class CanonicalTemplate:
    """Coefficient-independent part of a compiled canonical potential.

    Holds the configuration-index table for a fixed ``(n, index_matrix)``,
    with assignments producing the same multiset of configurations merged into
    one row, and the pair distances of every assignment. Binding a coefficient
    vector (:meth:`bind`) only recomputes penalties.
    """

    def __init__(self, ctx: WFContext, spec: PotentialSpec, budget: int = DEFAULT_COMPILE_BUDGET):
        validate_spec(spec, ctx)
        self.ctx = ctx
        self.n = spec.n
        self.index_matrix = spec.index_matrix
        self.h = spec.rows
        total = ctx.m**spec.n
        pairs = math.comb(spec.n, 2)
        need = total * (self.h * 8 + pairs + 24)
        if need > budget:
            raise CompileBudgetError(
                f"assignment table needs ~{need / 2**30:.1f} GiB for {total} assignments "
                f"(budget {budget / 2**30:.1f} GiB); use the streaming evaluation mode"
            )
        self.assignment_count = total
        points = _assignments(ctx.m, spec.n)
        zero = PotentialSpec("canonical", spec.n, spec.index_matrix, (0,) * pairs)
        table, _ = _resolve(ctx, zero, points)
        table.sort(axis=1)
        uniq, inverse = np.unique(table, axis=0, return_inverse=True)
        self.table = uniq.astype(np.int32)
        self.inverse = inverse.reshape(-1)
        iu, ju = np.triu_indices(spec.n, 1)
        dist_dtype = np.int8 if ctx.space.diameter < 128 else np.int64
        self.pair_dist = ctx.space.dist[points[:, iu], points[:, ju]].astype(dist_dtype)

    def matches(self, spec: PotentialSpec) -> bool:
        return spec.kind == "canonical" and spec.n == self.n and spec.index_matrix == self.index_matrix

    def bind(self, spec: PotentialSpec) -> "CompiledPotential":
        if not self.matches(spec):
            raise PotentialSpecError("spec does not share this template's index matrix")
        validate_spec(spec, self.ctx)
        coefs = np.asarray(spec.coefs, dtype=np.int64)
        if coefs.any():
            penalty = self.pair_dist @ coefs
        else:
            penalty = np.zeros(self.assignment_count, dtype=np.int64)
        groups = self.table.shape[0]
        # per merged row: largest penalty, first assignment attaining it
        order = np.lexsort((np.arange(self.assignment_count), -penalty, self.inverse))
        lead = np.r_[True, self.inverse[order][1:] != self.inverse[order][:-1]]
        first = np.empty(groups, dtype=np.int64)
        first[self.inverse[order[lead]]] = order[lead]
        return CompiledPotential._from_parts(self.ctx, spec, self.table, penalty[first], first)


class CompiledPotential(Potential):
    """Canonical potential with the full assignment table held in memory.

    Assignments producing the same multiset of configurations are merged,
    keeping the largest penalty (only that one can attain the minimum).
    ``assignment_ids[j]`` is the first odometer index achieving row ``j``.
    """

    def __init__(self, ctx: WFContext, spec: PotentialSpec, budget: int = DEFAULT_COMPILE_BUDGET):
        bound = CanonicalTemplate(ctx, spec, budget).bind(spec)
        self.__dict__.update(bound.__dict__)

    @classmethod
    def _from_parts(cls, ctx, spec, table, penalties, assignment_ids):
        self = cls.__new__(cls)
        Potential.__init__(self, ctx)
        self.spec = spec
        self.h = spec.rows
        self.shift_slope = self.h
        self.candidate_config_idxes = table
        self.penalties = penalties
        self.assignment_ids = assignment_ids
        return self

    def evaluate_many(self, ws):
        ws = np.asarray(ws)
        self._check(ws)
        wi = ws.astype(np.int64 if np.abs(ws).max(initial=0) > (1 << 26) else np.int32)
        table = self.candidate_config_idxes
        out = np.empty(ws.shape[0], dtype=np.int64)
        step = max(1, _GATHER_BLOCK_ELEMS // table.size)
        for s in range(0, ws.shape[0], step):
            part = wi[s : s + step][:, table].sum(axis=2, dtype=np.int64)
            out[s : s + step] = (part - self.penalties[None, :]).min(axis=1)
        return out

    def argmin(self, wf: np.ndarray) -> tuple[int, ...]:
        """Auxiliary-point assignment attaining the minimum (first in odometer order)."""
        wf = np.asarray(wf, dtype=np.int64)
        vals = wf[self.candidate_config_idxes].sum(axis=1) - self.penalties
        best = vals.min()
        idx = int(self.assignment_ids[vals == best].min())
        return tuple(int(x) for x in _assignments(self.ctx.m, self.spec.n, idx, idx + 1)[0])


class StreamingCanonicalPotential(Potential):
    """Same values as :class:`CompiledPotential`, recomputing assignment blocks on the fly."""

    def __init__(self, ctx: WFContext, spec: PotentialSpec, block: int = _STREAM_BLOCK):
        super().__init__(ctx)
        validate_spec(spec, ctx)
        self.spec = spec
        self.h = spec.rows
        self.shift_slope = self.h
        self.block = block

    def evaluate_many(self, ws):
        ws = np.asarray(ws, dtype=np.int64)
        self._check(ws)
        best = np.full(ws.shape[0], np.iinfo(np.int64).max, dtype=np.int64)
        total = self.ctx.m**self.spec.n
        for start in range(0, total, self.block):
            points = _assignments(self.ctx.m, self.spec.n, start, start + self.block)
            table, penalty = _resolve(self.ctx, self.spec, points)
            vals = ws[:, table].sum(axis=2) - penalty[None, :]
            np.minimum(best, vals.min(axis=1), out=best)
        return best


def compile_potential(
    ctx: WFContext,
    spec: PotentialSpec,
    budget: int = DEFAULT_COMPILE_BUDGET,
    streaming: bool = False,
) -> Potential:
    """Turn a spec into an evaluator bound to ``ctx``."""
    validate_spec(spec, ctx)
    if spec.kind == "canonical":
        if streaming:
            return StreamingCanonicalPotential(ctx, spec)
        return CompiledPotential(ctx, spec, budget)
    if spec.kind == "sum":
        return SumPotential(ctx)
    if spec.kind == "constant":
        return ConstantPotential(ctx, spec.value)
    if spec.kind == "external":
        from .external import ExternalPotential

        return ExternalPotential(ctx, spec)
    raise PotentialSpecError(f"unknown potential kind {spec.kind!r}")


def lift(psi, shift, c):
    """Un-normalized potential value ``psi + (c+1) * shift``."""
    return psi + (c + 1) * shift
