"""Exception hierarchy shared across the toolkit.

Every error that can surface at the CLI maps to one of the documented
exit codes; everything else is an internal error.
"""

from __future__ import annotations


class ProtolearnError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1
    token = "INTERNAL"


class ConfigError(ProtolearnError):
    """Bad configuration: alphabet, run options, fixture names, CLI flags."""

    exit_code = 2
    token = "CONFIG"


class FormatError(ConfigError):
    """Malformed or unsupported document."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TransportError(ProtolearnError):
    """SUL endpoint unreachable or the wire session broke down."""

    exit_code = 3
    token = "TRANSPORT"


class UnknownSymbolError(ProtolearnError):
    """An input symbol outside the machine's declared alphabet."""


class AlphabetMismatchError(ProtolearnError):
    """Two machines compared over different input alphabets."""


class UnmappablePacketError(ProtolearnError):
    """A concrete packet matches no declared abstract symbol.

    Signals an abstraction gap: the alphabet is too narrow for what the
    implementation actually sends.
    """


class AdapterInvariantError(ProtolearnError):
    """An always-on adapter self-check failed (packet count or match)."""


class NondeterminismHalt(ProtolearnError):
    """Raised when voting cannot certify a deterministic answer."""

    exit_code = 4
    token = "NONDETERMINISM"

    def __init__(self, report):
        super().__init__(f"nondeterministic response for {report.word_text()}")
        self.report = report


class NonDistinguishingError(ProtolearnError):
    """A counterexample fed to refinement that the hypothesis already explains."""


class SynthesisUnsat(ProtolearnError):
    """The term grammar cannot explain the observed traces."""

    def __init__(self, message: str, conflicting_traces=None):
        super().__init__(message)
        self.conflicting_traces = conflicting_traces or []
