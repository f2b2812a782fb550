"""Exception hierarchy for the decaf harness.

Candidate-level failures (a candidate that does not compile, times out, or
crashes) are recorded as data, never raised; exceptions are reserved for
harness misuse and environment problems.
"""


class DecafError(Exception):
    """Base class for all harness errors."""


class ParseError(DecafError):
    """Malformed input file; message names the file and line."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{loc}{message}")
        self.path = path
        self.line = line


class ValidationError(DecafError):
    """A domain-type invariant was violated."""


class ContractError(DecafError):
    """An operation was called outside its precondition."""


class PersistenceError(DecafError):
    """Run-store or cache I/O failed."""


class ConfigurationError(DecafError):
    """The environment is unusable (missing tool, bad profile)."""


class ExtractionError(DecafError):
    """A symbol or function body could not be extracted from a binary."""


class TransportError(DecafError):
    """A remote backend was unreachable after retries."""


class ProtocolError(DecafError):
    """A remote backend returned a malformed or out-of-range payload."""


class PolicyUnavailableError(DecafError):
    """A reranking policy cannot run for this task (e.g. no log-probs)."""


class ExecutionExempt(DecafError):
    """The task is marked not executable for correctness scoring."""
