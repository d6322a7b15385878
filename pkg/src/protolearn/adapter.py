"""The SUL-facing boundary: translation pair, session state, voting.

The adapter owns everything between the learner's abstract symbols and
the wire: it concretizes requests through a small reference client,
abstracts responses, enforces the session contract (reset before every
query, one packet sent per requested symbol, sent packets match their
requests), and records every completed query in the oracle table that
synthesis later consumes.
"""

from __future__ import annotations

import random
import threading
from collections import Counter
from dataclasses import dataclass, field

from . import wire
from .errors import (
    AdapterInvariantError,
    ConfigError,
    FormatError,
    TransportError,
    UnmappablePacketError,
)
from .symbols import (
    NIL,
    AbstractSymbol,
    AlphabetConfig,
    ConcretePacket,
    ConcreteTrace,
    Trace,
    parse_symbol,
)

SOURCE_PORT = 40965
DEST_PORT = 44344
WINDOW = 8192


def abstract(packet: ConcretePacket, alphabet: AlphabetConfig,
             direction: str = "output", keep_params: bool = False) -> AbstractSymbol:
    """The abstraction function: erase a packet down to its alphabet symbol.

    Numeric fields collapse to wildcards unless ``keep_params`` asks for
    the parameterized symbol used in synthesis contexts.
    """
    if packet.isNull:
        return NIL
    decl = alphabet.match(packet.flag_set(), direction)
    if decl is None:
        raise UnmappablePacketError(
            f"no alphabet symbol matches flags {packet.flags!r}; the abstraction has a gap"
        )
    if keep_params:
        return decl.symbol().with_params(
            tuple(packet.field_value(f) for f in decl.fields)
        )
    return decl.symbol()


@dataclass
class SessionState:
    """Reference-client state for one learning session."""

    alphabet: AlphabetConfig
    rng: random.Random
    phase: str = "closed"
    our_seq: int = 0
    our_ack: int = 0
    peer_seq: int | None = None
    pending: list = field(default_factory=list)

    @classmethod
    def fresh(cls, alphabet: AlphabetConfig, seed: int) -> "SessionState":
        return cls(alphabet=alphabet, rng=random.Random(seed))

    def draw_isn(self) -> int:
        return self.rng.randrange(1_000, 60_000)

    def receive(self, packet: ConcretePacket) -> None:
        """Digest a response: track peer numbers and queue the replies
        the reference logic would have sent on its own."""
        if packet.isNull:
            return
        flags = packet.flag_set()
        if "S" in flags or "F" in flags:
            self.peer_seq = packet.seqNumber
            self.our_ack = packet.seqNumber + 1
            if "S" in flags:
                self.phase = "established"
            # The protocol logic wants to acknowledge immediately; keep
            # the packet queued until the learner asks for an ACK.
            self.pending.append(
                ConcretePacket(
                    sourcePort=SOURCE_PORT,
                    destinationPort=DEST_PORT,
                    seqNumber=self.our_seq,
                    ackNumber=self.our_ack,
                    flags="A",
                    window=WINDOW,
                )
            )
        elif "R" in flags:
            self.phase = "reset"


def concretize(symbol: AbstractSymbol, session: SessionState) -> ConcretePacket:
    """The concretization function: build a packet fulfilling a symbol.

    The pending queue is searched first (FIFO among matches); otherwise
    a fresh packet is assembled from the current session counters.
    """
    decl = session.alphabet.decl_for(symbol, "input")
    erased = symbol.erased()
    for i, queued in enumerate(session.pending):
        if abstract(queued, session.alphabet, "input") == erased:
            return session.pending.pop(i)
    flags = decl.flags
    if "S" in flags and "A" not in flags:
        # A SYN is a new connection attempt: draw a fresh initial
        # sequence number so repeats within one session stay distinct.
        isn = session.draw_isn()
        seq, ack = isn, 0
        session.our_seq = isn + 1
        session.phase = "syn-sent"
    else:
        seq, ack = session.our_seq, session.our_ack
        if "P" in flags or "F" in flags:
            session.our_seq += decl.payload_class if "P" in flags else 1
        if "R" in flags:
            session.phase = "closed"
    return ConcretePacket(
        sourcePort=SOURCE_PORT,
        destinationPort=DEST_PORT,
        seqNumber=seq,
        ackNumber=ack,
        flags=flags,
        window=WINDOW,
    )


@dataclass(frozen=True)
class VotePolicy:
    min_repeats: int = 3
    agreement_threshold: float = 0.8
    max_repeats: int = 20

    def validate(self) -> None:
        if self.min_repeats < 1:
            raise ConfigError("min_repeats must be >= 1")
        if not (0.5 < self.agreement_threshold <= 1.0):
            raise ConfigError("agreement_threshold must be in (0.5, 1]")
        if self.max_repeats < self.min_repeats:
            raise ConfigError("max_repeats must be >= min_repeats")


@dataclass
class NondeterminismReport:
    """Evidence that one input word produced several distinct answers."""

    word: tuple
    answers: dict
    total: int

    def distinct(self) -> int:
        return len(self.answers)

    def frequencies(self) -> dict:
        return {ans: n / self.total for ans, n in self.answers.items()}

    def word_text(self) -> str:
        return " ".join(s.display() for s in self.word)


@dataclass(frozen=True)
class QueryRecord:
    """One completed query: the abstract trace plus its concrete twin."""

    abstract: Trace
    concrete: ConcreteTrace


class OracleTable:
    """Cache of paired abstract/concrete traces recorded while querying."""

    def __init__(self, entries=()):
        self._entries = list(entries)
        self._lock = threading.Lock()

    def append(self, record: QueryRecord, alphabet: AlphabetConfig) -> None:
        for packet, sym in zip(record.concrete.inputs, record.abstract.inputs):
            if abstract(packet, alphabet, "input") != sym.erased():
                raise AdapterInvariantError("oracle entry breaks the abstraction invariant")
        for packet, sym in zip(record.concrete.outputs, record.abstract.outputs):
            if abstract(packet, alphabet, "output") != sym.erased():
                raise AdapterInvariantError("oracle entry breaks the abstraction invariant")
        with self._lock:
            self._entries.append(record)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(list(self._entries))

    def snapshot(self) -> "OracleTable":
        with self._lock:
            return OracleTable(self._entries)

    def to_text(self) -> str:
        lines = ["oracle-table v1"]
        for record in self._entries:
            lines.append(f"entry {len(record.abstract)}")
            for sym, packet in zip(record.abstract.inputs, record.concrete.inputs):
                lines.append(f"i {sym.display()} | {wire.encode_packet(packet)}")
            for sym, packet in zip(record.abstract.outputs, record.concrete.outputs):
                lines.append(f"o {sym.display()} | {wire.encode_packet(packet)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "OracleTable":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("oracle-table v"):
            raise FormatError("missing 'oracle-table v1' header", line=1)
        if lines[0].split("v", 1)[1] != "1":
            raise FormatError("unsupported oracle-table version", line=1)
        entries = []
        idx = 1
        while idx < len(lines):
            line = lines[idx].strip()
            idx += 1
            if not line:
                continue
            if not line.startswith("entry "):
                raise FormatError(f"expected 'entry', got {line!r}", line=idx)
            n = int(line.split()[1])
            rows = []
            for off in range(2 * n):
                if idx >= len(lines):
                    raise FormatError("truncated oracle-table entry", line=idx)
                rows.append((idx + 1, lines[idx]))
                idx += 1
            a_in, a_out, c_in, c_out = [], [], [], []
            for no, row in rows:
                tag, _, rest = row.partition(" ")
                sym_text, _, packet_text = rest.partition("|")
                sym = parse_symbol(sym_text.strip())
                packet = wire.decode_packet(packet_text.strip())
                if tag == "i":
                    a_in.append(sym)
                    c_in.append(packet)
                elif tag == "o":
                    a_out.append(sym)
                    c_out.append(packet)
                else:
                    raise FormatError(f"bad oracle row tag {tag!r}", line=no)
            entries.append(
                QueryRecord(
                    Trace(tuple(a_in), tuple(a_out)),
                    ConcreteTrace(tuple(c_in), tuple(c_out)),
                )
            )
        return cls(entries)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "OracleTable":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read oracle table {path!r}: {exc}") from exc


def filter_retransmission(step_log: set, packet: ConcretePacket) -> bool:
    """True when the packet is new for this step; retransmitted (flags,
    seq) pairs already delivered in the same step are dropped."""
    if packet.isNull:
        return True
    key = (packet.flags, packet.seqNumber)
    if key in step_log:
        return False
    step_log.add(key)
    return True


class Adapter:
    """Query interface over one transport, with voting and caching hooks."""

    def __init__(self, transport: wire.Transport, alphabet: AlphabetConfig,
                 seed: int = 0, vote_policy: VotePolicy | None = None):
        self.transport = transport
        self.alphabet = alphabet
        self.vote_policy = vote_policy or VotePolicy()
        self.vote_policy.validate()
        self._rng = random.Random(seed)
        self._table = OracleTable()
        self.queries_completed = 0
        self.packets_sent = 0
        self.last_record: QueryRecord | None = None

    def _reset(self) -> None:
        for attempt in (1, 2):
            self.transport.send_line(wire.RESET)
            line = self.transport.recv_line()
            if line == wire.RESET_OK:
                return
            if line is not None:
                raise TransportError(f"unexpected reset reply {line!r}")
        raise TransportError("SUL did not acknowledge RESET")

    def query(self, inputs) -> list:
        """Reset, send each concretized input, and abstract each response.

        Always-on self-checks enforce the adapter contract: exactly one
        packet on the wire per requested symbol, and every sent packet
        abstracts back to its request.
        """
        inputs = tuple(inputs)
        self._reset()
        session = SessionState.fresh(self.alphabet, self._rng.randrange(2**62))
        sent_before = self.packets_sent
        outs = []
        sent_packets = []
        recv_packets = []
        for sym in inputs:
            packet = concretize(sym, session)
            if abstract(packet, self.alphabet, "input") != sym.erased():
                raise AdapterInvariantError(
                    f"built packet abstracts to something other than {sym.display()}"
                )
            self.transport.send_line(wire.encode_packet(packet))
            self.packets_sent += 1
            # The local framing delivers at most one record per step, so
            # the retransmission filter only bites on transports that can
            # flood; the log is scoped to the step on purpose, repeated
            # answers across steps are genuine responses.
            step_log: set = set()
            line = self.transport.recv_line()
            response = wire.decode_packet(line) if line is not None else ConcretePacket.nil()
            if not filter_retransmission(step_log, response):
                response = ConcretePacket.nil()
            session.receive(response)
            outs.append(abstract(response, self.alphabet, "output"))
            sent_packets.append(packet)
            recv_packets.append(response)
        if self.packets_sent - sent_before != len(inputs):
            raise AdapterInvariantError("wire packet count differs from requested symbols")
        record = QueryRecord(
            Trace(inputs, tuple(outs)),
            ConcreteTrace(tuple(sent_packets), tuple(recv_packets)),
        )
        self._table.append(record, self.alphabet)
        self.last_record = record
        self.queries_completed += 1
        return outs

    def voted_query(self, inputs, policy: VotePolicy | None = None):
        """Repeat a query per the vote policy; returns the certified
        answer or a NondeterminismReport carrying what was seen."""
        policy = policy or self.vote_policy
        policy.validate()
        answers = [tuple(self.query(inputs)) for _ in range(policy.min_repeats)]
        if len(set(answers)) == 1:
            return list(answers[0])
        while len(answers) < policy.max_repeats:
            answers.append(tuple(self.query(inputs)))
        counts = Counter(answers)
        top, n = counts.most_common(1)[0]
        if n / len(answers) >= policy.agreement_threshold:
            return list(top)
        return NondeterminismReport(
            word=tuple(inputs),
            answers=dict(counts),
            total=len(answers),
        )

    def oracle_table_snapshot(self) -> OracleTable:
        return self._table.snapshot()

    def close(self) -> None:
        self.transport.close()
