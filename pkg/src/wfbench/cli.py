"""Command-line entry point: ``wfbench {generate,evaluate,certify,search,verify,report}``.

Exit codes: 0 success, 1 a check failed (``--require-perfect``, ``verify``
mismatch, infeasible ``certify``), 2 usage error, 3 I/O or format error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    EnumerationOverflowError,
    ExternalPotentialError,
    GraphFormatError,
    InvalidConfigurationError,
    MetricError,
    PotentialSpecError,
    SearchConfigError,
    WFBenchError,
)
from .feasibility import as_ratio, certify, verify_certificate
from .graph import ALL_STARTS, BuildOptions, build_graph, verify_edges
from .graphfile import load_graph, save_graph
from .metric import load_metric, make_circle
from .metrics import evaluate, node_values, shortfalls, violated_mask
from .potential import compile_potential, load_spec, validate_spec
from .search import (
    Budget,
    CoefficientLocalSearch,
    NaiveFamily,
    ProxyConfig,
    SearchEvaluator,
    StageConfig,
    StagedCoefficientSearch,
    SweepFamily,
    ask_tell_loop,
)
from .workfn import WFContext

logger = logging.getLogger("wfbench")

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

PRESETS = {
    "circle-k3-m6": (3, 6),
    "circle-k3-m8": (3, 8),
    "circle-k4-m6": (4, 6),
    "circle-k4-m8": (4, 8),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _ratio(text: str) -> Fraction:
    try:
        return as_ratio(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _print_table(rows, out=None) -> None:
    out = out or sys.stdout
    width = max((len(key) for key, _ in rows), default=0)
    for key, val in rows:
        print(f"  {key:<{width}}  {val}", file=out)


def _write_json(path: str, obj) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _parse_start(text: str, k: int):
    if text == ALL_STARTS:
        return ALL_STARTS
    try:
        pts = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--start must be 'all' or comma-separated points, got {text!r}") from None
    if len(pts) != k:
        raise UsageError(f"--start has {len(pts)} points but k = {k}")
    return pts


def cmd_generate(args) -> int:
    if args.preset:
        if args.k is not None or args.m is not None or args.metric:
            raise UsageError("--preset cannot be combined with --k/--m/--metric")
        k, m = PRESETS[args.preset]
        space = make_circle(m)
    elif args.metric:
        space, k = load_metric(args.metric)
        if args.k is not None and args.k != k:
            raise UsageError(f"--k {args.k} disagrees with k = {k} in {args.metric}")
    else:
        if args.k is None or args.m is None:
            raise UsageError("generate needs --preset, --metric, or both --k and --m")
        k, space = args.k, make_circle(args.m)
    ctx = WFContext(space, k)
    opts = BuildOptions(
        start=_parse_start(args.start, k),
        self_loops=not args.no_self_loops,
        symmetry=args.symmetry,
        probabilistic=args.probabilistic,
    )
    t0 = time.monotonic()
    graph = build_graph(ctx, opts)
    digest = save_graph(graph, args.out)
    _print_table(
        [
            ("k", str(k)),
            ("m", str(space.m)),
            ("configurations", str(ctx.count)),
            ("nodes", str(graph.num_nodes)),
            ("edges", str(graph.num_edges)),
            ("checksum", digest),
            ("seconds", f"{time.monotonic() - t0:.2f}"),
            ("written", args.out),
        ]
    )
    return EXIT_OK


def _load_potential(graph, source):
    spec = load_spec(source, graph.k)
    validate_spec(spec, graph.ctx)
    return spec, compile_potential(graph.ctx, spec)


def cmd_evaluate(args) -> int:
    graph = load_graph(args.graph)
    spec, pot = _load_potential(graph, args.potential)
    try:
        report = evaluate(graph, pot, args.c, with_bellman=args.with_bellman)
    finally:
        pot.close()
    print(f"potential {spec.name or spec.kind} on k={graph.k}, m={graph.m}")
    _print_table(report.summary_rows())
    if args.report:
        Path(args.report).write_text(report.dumps())
    if args.require_perfect and report.violations_k > 0:
        print(f"error: {report.violations_k} violated edges", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_certify(args) -> int:
    graph = load_graph(args.graph)
    cert = certify(graph, args.c)
    rows = [("c", str(cert.c)), ("feasible", str(cert.feasible)), ("rounds", str(cert.rounds))]
    if cert.feasible:
        rows.append(("violated by psi", str(verify_certificate(graph, cert))))
    else:
        rows.append(("cycle length", str(len(cert.cycle))))
    _print_table(rows)
    if args.emit_psi:
        _write_json(args.emit_psi, cert.to_json())
    return EXIT_OK if cert.feasible else EXIT_FAILED


def cmd_verify(args) -> int:
    graph = load_graph(args.graph)
    problems = verify_edges(graph, stop_at_first=True)
    if problems:
        e, desc = problems[0]
        print(f"mismatch at edge {e}: {desc}", file=sys.stderr)
        return EXIT_FAILED
    print(f"ok: {graph.num_edges} edges on {graph.num_nodes} nodes re-derived")
    return EXIT_OK


def cmd_report(args) -> int:
    graph = load_graph(args.graph)
    _, pot = _load_potential(graph, args.potential)
    try:
        values = node_values(graph, pot)
    finally:
        pot.close()
    short = shortfalls(graph, values, args.c)
    rows = np.arange(graph.num_edges) if args.all_edges else np.flatnonzero(violated_mask(graph, values, args.c))
    out = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    try:
        writer = csv.writer(out)
        writer.writerow(["edge", "u", "r", "v", "grad", "dopt", "weight", "phi_u", "phi_v", "shortfall"])
        weights = graph.weights(args.c)
        for e in rows.tolist():
            u, v = int(graph.edge_u[e]), int(graph.edge_v[e])
            writer.writerow(
                [
                    e,
                    u,
                    int(graph.edge_r[e]),
                    v,
                    int(graph.grad[e]),
                    int(graph.dopt[e]),
                    _num(weights[e]),
                    _num(values[u]),
                    _num(values[v]),
                    _num(short[e]),
                ]
            )
    finally:
        if out is not sys.stdout:
            out.close()
    if args.out != "-":
        print(f"{rows.size} rows written to {args.out}")
    return EXIT_OK


def _num(x):
    x = float(x)
    return int(x) if x.is_integer() else repr(x)


def cmd_search(args) -> int:
    graph = load_graph(args.graph)
    seed = load_spec(args.seed_potential, graph.k)
    validate_spec(seed, graph.ctx)
    proxy = ProxyConfig(
        sample_size=min(args.proxy_sample, graph.num_edges),
        hard_cache_capacity=args.hard_cache,
        early_stop_violations=args.early_stop or None,
        confirm_sample_size=min(args.confirm_sample, graph.num_edges),
        rng_seed=args.rng,
    )
    frozen = args.freeze_point
    if args.family == "naive":
        family = NaiveFamily(seed)
        stages = ("quick", "confirm")
    elif args.family == "coef-local":
        family = CoefficientLocalSearch(seed, frozen_point=frozen)
        stages = ("quick", "confirm")
    elif args.family == "sweep":
        family = SweepFamily(seed, frozen_point=frozen)
        stages = ("quick", "confirm")
    else:
        family = StagedCoefficientSearch(
            seed,
            StageConfig(
                promotion_slack=args.promotion_slack,
                promotion_threshold=args.promotion_threshold,
                frozen_point=frozen,
            ),
        )
        stages = ("confirm",)
    evaluator = SearchEvaluator(graph, args.c, proxy, cache_stages=stages)
    budget = Budget(args.budget_evals, args.budget_secs if args.budget_secs else math.inf)
    outcome = ask_tell_loop(family, evaluator, budget)
    outcome.notes = {
        "family": args.family,
        "quick_sample_size": proxy.sample_size,
        "confirm_sample_size": proxy.confirm_sample_size,
        "defaults_are_conventions": True,
    }
    rep = outcome.best_report
    _print_table(
        [
            ("family", args.family),
            ("proxy evaluations", str(outcome.evaluations)),
            ("exact evaluations", str(outcome.exact_evaluations)),
            ("seconds", f"{outcome.wall_time:.2f}"),
            ("best coefs", " ".join(map(str, outcome.best.spec.coefs)) or "-"),
            ("best provenance", outcome.best.provenance),
            ("violations_k", str(rep.violations_k)),
            ("violations_k_l1", f"{rep.violations_k_l1:.6g}"),
        ]
    )
    if args.out:
        _write_json(args.out, outcome.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wfbench", description="Work-function graphs and potential-function checks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate", help="enumerate a work-function graph and write it")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--k", type=int)
    g.add_argument("--m", type=int, help="points on the discretized circle")
    g.add_argument("--metric", help="metric definition JSON file")
    g.add_argument("--out", required=True)
    g.add_argument("--symmetry", action="store_true", help="merge nodes up to circle rotations/reflections")
    g.add_argument("--no-self-loops", action="store_true")
    g.add_argument(
        "--start",
        default=ALL_STARTS,
        help="'all' (one seed per configuration, default) or a start configuration like 0,0,0",
    )
    g.add_argument("--probabilistic", action="store_true", help="Bloom-filter visited set (lower bounds)")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="score a potential on a graph")
    e.add_argument("--graph", required=True)
    e.add_argument("--potential", required=True, help="spec JSON file or builtin:NAME")
    e.add_argument("--c", type=_ratio, required=True)
    e.add_argument("--report", help="write the JSON report here")
    e.add_argument("--with-bellman", action="store_true", help="also correlate with the Bellman potential")
    e.add_argument("--require-perfect", action="store_true", help="exit 1 unless violations_k is 0")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("certify", help="Bellman-Ford feasibility at ratio c")
    c.add_argument("--graph", required=True)
    c.add_argument("--c", type=_ratio, required=True)
    c.add_argument("--emit-psi", help="write the certificate JSON here")
    c.set_defaults(func=cmd_certify)

    s = sub.add_parser("search", help="search coefficients around a seed potential")
    s.add_argument("--graph", required=True)
    s.add_argument("--c", type=_ratio, required=True)
    s.add_argument("--seed-potential", required=True)
    s.add_argument("--family", choices=["naive", "coef-local", "staged", "sweep"], default="staged")
    s.add_argument("--budget-evals", type=int, default=1000)
    s.add_argument("--budget-secs", type=float, default=0, help="wall-clock limit, 0 for none")
    s.add_argument("--proxy-sample", type=int, default=50_000)
    s.add_argument("--confirm-sample", type=int, default=200_000)
    s.add_argument("--hard-cache", type=int, default=4096)
    s.add_argument("--early-stop", type=int, default=32, help="0 disables early stopping")
    s.add_argument("--rng", type=int, default=1234)
    s.add_argument("--promotion-slack", type=int, default=2)
    s.add_argument("--promotion-threshold", type=int)
    s.add_argument("--freeze-point", type=int, help="never mutate coefficients touching this point")
    s.add_argument("--out")
    s.set_defaults(func=cmd_search)

    v = sub.add_parser("verify", help="re-derive every stored edge")
    v.add_argument("graph")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("report", help="CSV of per-edge shortfalls")
    r.add_argument("--graph", required=True)
    r.add_argument("--potential", required=True)
    r.add_argument("--c", type=_ratio, required=True)
    r.add_argument("--out", default="-")
    r.add_argument("--all-edges", action="store_true", help="include satisfied edges")
    r.set_defaults(func=cmd_report)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"wfbench {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        OSError,
        GraphFormatError,
        MetricError,
        PotentialSpecError,
        json.JSONDecodeError,
    ) as exc:
        print(f"wfbench {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InvalidConfigurationError, SearchConfigError, EnumerationOverflowError, ValueError) as exc:
        print(f"wfbench {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ExternalPotentialError as exc:
        node = getattr(exc, "node_id", None)
        print(f"wfbench {args.command}: {exc} (node {node})", file=sys.stderr)
        return EXIT_IO
    except WFBenchError as exc:
        print(f"wfbench {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
