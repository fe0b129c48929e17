"""Work-function graphs for the k-server problem on small metrics, and tools
for checking candidate potential functions against them."""

__version__ = "0.1.0"

from .errors import WFBenchError
from .feasibility import BellmanCertificate, certify, verify_certificate
from .graph import BuildOptions, WorkFunctionGraph, build_graph, verify_edges
from .graphfile import load_graph, save_graph
from .metric import ConfigIndexer, MetricSpace, make_circle, matching_distance
from .metrics import EvaluationReport, evaluate
from .potential import PotentialSpec, builtin, compile_potential, load_spec
from .search import ProxyConfig, proxy_score, ask_tell_loop, staged_coefficient_search
from .workfn import WFContext, simulate, update

__all__ = [
    "BellmanCertificate",
    "BuildOptions",
    "ConfigIndexer",
    "EvaluationReport",
    "MetricSpace",
    "PotentialSpec",
    "ProxyConfig",
    "WFBenchError",
    "WFContext",
    "WorkFunctionGraph",
    "ask_tell_loop",
    "build_graph",
    "builtin",
    "certify",
    "compile_potential",
    "evaluate",
    "load_graph",
    "load_spec",
    "make_circle",
    "matching_distance",
    "proxy_score",
    "save_graph",
    "simulate",
    "staged_coefficient_search",
    "update",
    "verify_certificate",
    "verify_edges",
]
