"""Self-hosted simulated protocol implementations.

These stand in for real protocol stacks: each fixture is a hand-written
ground-truth machine over the seven-symbol TCP alphabet plus register
rules for the sequence/acknowledgment arithmetic, served over the same
wire protocol the adapter speaks.  Bug-injected variants reproduce the
issue archetypes used by the analyses: probabilistic resets after a
violation, a constant field that should vary, and a single flipped
transition output.

The fixtures are fixtures: they model no particular kernel, they are
built to be the same shape and scale as real learned models.
"""

from __future__ import annotations

import random
import socket
import threading
from dataclasses import dataclass

from . import wire
from .errors import ConfigError, TransportError, UnmappablePacketError
from .adapter import abstract
from .mealy import MealyMachine
from .symbols import AlphabetConfig, ConcretePacket, tcp_alphabet

SERVER_WINDOW = 65535
DATA_OFFSET = 5
# The server mirrors the reference client's fixed port pair.
SERVER_SRC_PORT = 44344
SERVER_DST_PORT = 40965


@dataclass(frozen=True)
class RuleTerm:
    """Server-side register/output term; unlike the synthesis grammar it
    may use any offset, which lets fixtures fall outside that grammar."""

    source: str
    offset: int = 0
    from_input: bool = False

    def eval(self, registers: dict, params: dict) -> int:
        base = params[self.source] if self.from_input else registers[self.source]
        return base + self.offset


@dataclass(frozen=True)
class BugInjection:
    kind: str
    p: float = 0.0
    field: str = ""
    value: int = 0
    state: int = -1
    symbol: str = ""
    seed: int | None = None

    def validate(self, skeleton: MealyMachine, alphabet: AlphabetConfig) -> None:
        if self.kind == "probabilistic_reset":
            if not (0.0 < self.p < 1.0):
                raise ConfigError("probabilistic_reset needs p in (0,1)")
        elif self.kind == "constant_field":
            if not self.field:
                raise ConfigError("constant_field needs a field name")
        elif self.kind == "transition_flip":
            decl = alphabet.find(self.symbol)
            if decl is None or self.state not in skeleton.states:
                raise ConfigError(
                    f"transition_flip targets no existing transition ({self.state}, {self.symbol})"
                )
        else:
            raise ConfigError(f"unknown bug kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "BugInjection":
        kind, _, args = text.partition(":")
        parts = [a for a in args.split(",") if a] if args else []
        try:
            if kind == "probabilistic_reset":
                return cls(kind, p=float(parts[0]) if parts else 0.82)
            if kind == "constant_field":
                field = parts[0] if parts else "dataOffset"
                value = int(parts[1]) if len(parts) > 1 else 0
                return cls(kind, field=field, value=value)
            if kind == "transition_flip":
                if len(parts) != 2:
                    raise ConfigError("transition_flip needs state,symbol")
                return cls(kind, state=int(parts[0]), symbol=parts[1])
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"bad bug arguments {text!r}") from exc
        raise ConfigError(f"unknown bug kind {kind!r}")


@dataclass
class SimSpec:
    """Everything a server needs: the machine, its arithmetic, the bug."""

    name: str
    alphabet: AlphabetConfig
    skeleton: MealyMachine
    registers: tuple
    rules: dict
    reset_state: int | None = None
    bug: BugInjection | None = None


REGISTERS = ("srv", "cli")


def _uniform_rules(skeleton: MealyMachine, ack_offset: int = 1, srv_bumps=()):
    """Every transition tracks the peer's last sequence number; packet
    outputs carry (srv, cli+ack_offset)."""
    rules = {}
    for s in skeleton.states:
        for a in skeleton.inputs:
            srv_term = RuleTerm("srv", 1 if (s, a.kind) in srv_bumps else 0)
            updates = {"srv": srv_term, "cli": RuleTerm("seqNumber", from_input=True)}
            out = skeleton.output[(s, a)]
            outs = [] if out.is_nil() else [RuleTerm("srv"), RuleTerm("cli", ack_offset)]
            rules[(s, a)] = (updates, outs)
    return rules


_TCP_TABLE = {
    # state: {input kind: (target, output kind or None for NIL)}
    0: {"SYN": (1, "ACK+SYN"), "SYN+ACK": (0, "ACK+RST"), "ACK": (0, None),
        "ACK+PSH": (0, "ACK+RST"), "FIN+ACK": (0, None), "RST": (0, None),
        "ACK+RST": (0, None)},
    1: {"SYN": (1, "ACK+SYN"), "SYN+ACK": (5, "ACK+RST"), "ACK": (2, None),
        "ACK+PSH": (3, "ACK"), "FIN+ACK": (4, "ACK"), "RST": (0, None),
        "ACK+RST": (0, None)},
    2: {"SYN": (2, "ACK"), "SYN+ACK": (2, "ACK"), "ACK": (2, None),
        "ACK+PSH": (3, "ACK"), "FIN+ACK": (4, "ACK"), "RST": (5, None),
        "ACK+RST": (5, None)},
    3: {"SYN": (3, "ACK"), "SYN+ACK": (3, "ACK"), "ACK": (3, None),
        "ACK+PSH": (3, "ACK"), "FIN+ACK": (4, "FIN+ACK"), "RST": (5, None),
        "ACK+RST": (5, None)},
    4: {"SYN": (4, None), "SYN+ACK": (4, None), "ACK": (4, None),
        "ACK+PSH": (5, "ACK+RST"), "FIN+ACK": (4, "ACK"), "RST": (5, None),
        "ACK+RST": (5, None)},
    5: {"SYN": (5, None), "SYN+ACK": (5, None), "ACK": (5, None),
        "ACK+PSH": (5, None), "FIN+ACK": (5, None), "RST": (5, None),
        "ACK+RST": (5, None)},
}

# Transitions on which the server's own sequence number advances (its
# SYN was acknowledged, so the next packets count from ISN+1).
_TCP_SRV_BUMPS = {(1, "ACK"), (1, "ACK+PSH"), (1, "FIN+ACK")}


def _machine_from_table(alphabet: AlphabetConfig, table: dict) -> MealyMachine:
    inputs = alphabet.input_symbols()
    by_kind = {sym.kind: sym for sym in inputs}
    out_by_kind = {d.kind: d.symbol() for d in alphabet.outputs}
    transition = {}
    output = {}
    for state, row in table.items():
        for kind, (target, out_kind) in row.items():
            sym = by_kind[kind]
            transition[(state, sym)] = target
            output[(state, sym)] = out_by_kind[out_kind] if out_kind else out_by_kind["NIL"]
    return MealyMachine(
        range(len(table)), 0, inputs, alphabet.output_symbols(), transition, output
    )


def _flip_output(skeleton: MealyMachine, state: int, kind: str) -> MealyMachine:
    by_kind = {sym.kind: sym for sym in skeleton.inputs}
    sym = by_kind[kind]
    ack = next(o for o in skeleton.outputs if o.kind == "ACK")
    nil = next(o for o in skeleton.outputs if o.is_nil())
    output = dict(skeleton.output)
    output[(state, sym)] = nil if not output[(state, sym)].is_nil() else ack
    return MealyMachine(
        skeleton.states, skeleton.initial, skeleton.inputs, skeleton.outputs,
        skeleton.transition, output,
    )


def _chain_table(n: int) -> dict:
    table = {}
    for i in range(n):
        row = {}
        for kind in ("SYN", "SYN+ACK", "ACK", "FIN+ACK", "RST", "ACK+RST"):
            row[kind] = (i, None)
        if i < n - 1:
            row["ACK+PSH"] = (i + 1, "ACK")
        else:
            row["ACK+PSH"] = (n - 1, "ACK+RST")
        table[i] = row
    return table


def _echo_table() -> dict:
    kinds = ("SYN", "SYN+ACK", "ACK", "ACK+PSH", "FIN+ACK", "RST", "ACK+RST")
    return {0: {k: (0, "ACK") for k in kinds}}


def fixture(name: str, bug: BugInjection | None = None) -> SimSpec:
    """Build a named fixture spec; an explicit bug overrides the default."""
    alphabet = tcp_alphabet()
    if name in ("tcp-basic", "tcp-noisy-reset", "tcp-variant", "tcp-constant-field", "tcp-skip2"):
        skeleton = _machine_from_table(alphabet, _TCP_TABLE)
        ack_offset = 2 if name == "tcp-skip2" else 1
        if bug is None:
            if name == "tcp-noisy-reset":
                bug = BugInjection("probabilistic_reset", p=0.82)
            elif name == "tcp-variant":
                bug = BugInjection("transition_flip", state=2, symbol="SYN+ACK")
            elif name == "tcp-constant-field":
                bug = BugInjection("constant_field", field="dataOffset", value=0)
        if bug is not None:
            bug.validate(skeleton, alphabet)
            if bug.kind == "transition_flip":
                skeleton = _flip_output(skeleton, bug.state, bug.symbol)
        rules = _uniform_rules(skeleton, ack_offset, _TCP_SRV_BUMPS)
        return SimSpec(name, alphabet, skeleton, REGISTERS, rules, reset_state=5, bug=bug)
    if name.startswith("chain-"):
        n = int(name.split("-", 1)[1])
        if n < 2:
            raise ConfigError("chain fixtures need at least 2 states")
        skeleton = _machine_from_table(alphabet, _chain_table(n))
        if bug is not None:
            bug.validate(skeleton, alphabet)
            if bug.kind == "transition_flip":
                skeleton = _flip_output(skeleton, bug.state, bug.symbol)
        rules = _uniform_rules(skeleton)
        return SimSpec(name, alphabet, skeleton, REGISTERS, rules, bug=bug)
    if name == "echo":
        skeleton = _machine_from_table(alphabet, _echo_table())
        rules = _uniform_rules(skeleton)
        return SimSpec(name, alphabet, skeleton, REGISTERS, rules, bug=bug)
    raise ConfigError(f"unknown fixture {name!r}")


FIXTURE_NAMES = (
    "tcp-basic", "tcp-variant", "tcp-noisy-reset", "tcp-constant-field",
    "tcp-skip2", "chain-6", "chain-12", "echo",
)


def ground_truth(spec: SimSpec) -> MealyMachine:
    """The exact machine the server implements.

    Probabilistic fixtures have no deterministic ground truth and are
    refused.
    """
    if spec.bug is not None and spec.bug.kind == "probabilistic_reset":
        raise ConfigError(f"{spec.name} is probabilistic; it has no ground-truth machine")
    return spec.skeleton


class SimCore:
    """Transport-independent simulator: one line in, one line out."""

    def __init__(self, spec: SimSpec, seed: int = 0):
        self.spec = spec
        self._isn_rng = random.Random(seed)
        bug_seed = spec.bug.seed if spec.bug and spec.bug.seed is not None else seed ^ 0x5EED
        self._bug_rng = random.Random(bug_seed)
        self.sessions = 0
        self._new_session()

    def _new_session(self) -> None:
        self.state = self.spec.skeleton.initial
        self.registers = {"srv": self._isn_rng.randrange(10_000, 90_000), "cli": 0}
        self.sessions += 1

    def handle_line(self, line: str) -> str:
        line = line.strip()
        if line == wire.RESET:
            self._new_session()
            return wire.RESET_OK
        packet = wire.decode_packet(line)
        return self._handle_packet(packet)

    def _handle_packet(self, packet: ConcretePacket) -> str:
        try:
            sym = abstract(packet, self.spec.alphabet, "input")
        except UnmappablePacketError:
            return "ERR unmappable-packet"
        skeleton = self.spec.skeleton
        key = (self.state, sym)
        target = skeleton.transition[key]
        out_sym = skeleton.output[key]
        updates, out_terms = self.spec.rules[key]
        decl = self.spec.alphabet.decl_for(sym, "input")
        params = {f: packet.field_value(f) for f in decl.fields}
        new_regs = {
            reg: updates[reg].eval(self.registers, params) for reg in self.spec.registers
        }
        bug = self.spec.bug
        if (
            bug is not None
            and bug.kind == "probabilistic_reset"
            and self.state == self.spec.reset_state
        ):
            if self._bug_rng.random() < bug.p:
                out_sym = next(o for o in skeleton.outputs if o.kind == "ACK+RST")
                out_terms = [RuleTerm("srv"), RuleTerm("cli", 1)]
            else:
                out_sym = next(o for o in skeleton.outputs if o.is_nil())
                out_terms = []
        self.state = target
        self.registers = new_regs
        if out_sym.is_nil():
            return wire.NIL_RECORD
        values = [t.eval(new_regs, params) for t in out_terms]
        response = ConcretePacket(
            sourcePort=SERVER_SRC_PORT,
            destinationPort=SERVER_DST_PORT,
            seqNumber=values[0] if values else 0,
            ackNumber=values[1] if len(values) > 1 else 0,
            dataOffset=DATA_OFFSET,
            flags=self.spec.alphabet.decl_for(out_sym, "output").flags,
            window=SERVER_WINDOW,
        )
        if bug is not None and bug.kind == "constant_field":
            response = self._override_field(response, bug.field, bug.value)
        return wire.encode_packet(response)

    @staticmethod
    def _override_field(packet: ConcretePacket, field: str, value: int) -> ConcretePacket:
        values = {name: getattr(packet, name) for name in packet.__dataclass_fields__}
        values[field] = value
        return ConcretePacket(**values)


class ServerHandle:
    """A running simulator bound to a local endpoint."""

    def __init__(self, spec: SimSpec, host: str, port: int, seed: int):
        self.spec = spec
        self.seed = seed
        self._stop = threading.Event()
        try:
            self._listener = socket.create_server((host, port))
        except OSError as exc:
            raise TransportError(f"cannot bind {host}:{port}: {exc}") from exc
        self.host, self.port = self._listener.getsockname()[:2]
        self._listener.settimeout(0.2)
        self._thread = threading.Thread(target=self._serve_loop, daemon=True)
        self._thread.start()

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    def _serve_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            with conn:
                self._serve_connection(conn)
        self._listener.close()

    def _serve_connection(self, conn: socket.socket) -> None:
        # Each connection is an independent run: same seed, same stream
        # of ISNs, so reruns reproduce bit for bit.
        core = SimCore(self.spec, self.seed)
        fh = conn.makefile("rwb")
        conn.settimeout(0.5)
        while not self._stop.is_set():
            try:
                raw = fh.readline()
            except socket.timeout:
                continue
            except OSError:
                break
            if not raw:
                break
            try:
                reply = core.handle_line(raw.decode("utf-8"))
            except Exception as exc:  # surface, do not kill the server
                reply = f"ERR {type(exc).__name__}"
            try:
                fh.write(reply.encode("utf-8") + b"\n")
                fh.flush()
            except OSError:
                break

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2.0)


def serve(spec: SimSpec, endpoint: str, seed: int = 0) -> ServerHandle:
    """Start serving a fixture on ``host:port`` (port 0 picks a free one)."""
    host, port = wire.parse_endpoint(endpoint)
    return ServerHandle(spec, host, port, seed)
