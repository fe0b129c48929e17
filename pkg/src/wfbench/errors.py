"""Exception hierarchy shared across the package."""


class WFBenchError(Exception):
    """Base class for every error raised by wfbench."""


class MetricError(WFBenchError, ValueError):
    """A distance matrix or antipode map violates the metric invariants."""


class InvalidConfigurationError(WFBenchError, ValueError):
    pass


class InvalidIndexError(WFBenchError, IndexError):
    pass


class InvalidRequestError(WFBenchError, ValueError):
    pass


class UnsupportedSymmetryError(WFBenchError):
    pass


class EnumerationOverflowError(WFBenchError):
    def __init__(self, cap: int):
        super().__init__(f"work-function graph exceeds the node cap of {cap} nodes")
        self.cap = cap


class GraphFormatError(WFBenchError):
    """Base class for graph file load failures."""


class GraphVersionError(GraphFormatError):
    pass


class GraphChecksumError(GraphFormatError):
    pass


class GraphTruncatedError(GraphFormatError):
    pass


class PotentialSpecError(WFBenchError, ValueError):
    pass


class CompileBudgetError(WFBenchError):
    pass


class EvaluationContextError(WFBenchError):
    pass


class ExternalPotentialError(WFBenchError):
    """Failure talking to an external potential process.

    ``node_id`` is the id of the work function being evaluated when the
    failure happened (``None`` outside graph evaluation), ``last_ack`` the last
    request id the process answered.
    """

    def __init__(self, message: str, node_id: int | None = None, last_ack: int | None = None):
        super().__init__(message)
        self.node_id = node_id
        self.last_ack = last_ack


class ExternalProcessExited(ExternalPotentialError):
    pass


class ExternalProtocolError(ExternalPotentialError):
    pass


class ExternalTimeout(ExternalPotentialError):
    pass


class SearchConfigError(WFBenchError, ValueError):
    pass
