"""Alphabets and the symbols that move through the pipeline.

Two symbol levels exist side by side: structured wire-level packets
(ConcretePacket) and the simplified symbols the learner sees
(AbstractSymbol).  An AlphabetConfig declares which abstract symbols
exist, how they map onto packet flags, and which packet fields hide
behind their parameter slots.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .errors import ConfigError, FormatError

WILDCARD = "?"

#: Order in which flag letters are rendered into the packet field.
FLAG_ORDER = "SAPFRU"

PACKET_FIELDS = (
    "isNull",
    "sourcePort",
    "destinationPort",
    "seqNumber",
    "ackNumber",
    "dataOffset",
    "reserved",
    "flags",
    "window",
    "checksum",
    "urgentPointer",
)


@dataclass(frozen=True)
class AbstractSymbol:
    """One element of the learner's alphabet.

    ``params`` holds one slot per declared parameter: the wildcard "?"
    while learning, or a concrete integer in parameterized contexts.
    The payload-length class rides along as the last display slot.
    Flag letters are carried for the adapter's benefit but are not part
    of symbol identity; the kind string already determines them.
    """

    kind: str
    flags: frozenset[str] = field(default=frozenset(), compare=False)
    payload_class: int = 0
    params: tuple = ()

    def is_nil(self) -> bool:
        return self.kind == "NIL"

    def erased(self) -> "AbstractSymbol":
        """The same symbol with every parameter back to a wildcard."""
        if all(p == WILDCARD for p in self.params):
            return self
        return replace(self, params=tuple(WILDCARD for _ in self.params))

    def with_params(self, values) -> "AbstractSymbol":
        values = tuple(values)
        if len(values) != len(self.params):
            raise ConfigError(
                f"{self.kind} takes {len(self.params)} parameters, got {len(values)}"
            )
        return replace(self, params=values)

    def display(self) -> str:
        if self.is_nil():
            return "NIL"
        slots = [str(p) for p in self.params] + [str(self.payload_class)]
        return f"{self.kind}({','.join(slots)})"

    def __str__(self) -> str:  # pragma: no cover - convenience
        return self.display()


_DISPLAY_RE = re.compile(r"^([A-Za-z0-9_+\-]+)\(([^)]*)\)$")


def parse_symbol(text: str, alphabet: "AlphabetConfig | None" = None) -> AbstractSymbol:
    """Parse a display form like ``SYN(?,?,0)`` back into a symbol.

    When an alphabet is given, the flag set is recovered from the
    matching declaration; otherwise flags are left empty.
    """
    text = text.strip()
    if text == "NIL":
        return NIL
    m = _DISPLAY_RE.match(text)
    if m is None:
        raise FormatError(f"unparsable symbol {text!r}")
    kind, body = m.group(1), m.group(2)
    slots = [s.strip() for s in body.split(",")] if body else []
    if not slots:
        raise FormatError(f"symbol {text!r} lacks a payload-class slot")
    try:
        payload_class = int(slots[-1])
    except ValueError as exc:
        raise FormatError(f"symbol {text!r}: payload class {slots[-1]!r} not an integer") from exc
    params = tuple(WILDCARD if s == WILDCARD else int(s) for s in slots[:-1])
    flags: frozenset[str] = frozenset()
    if alphabet is not None:
        decl = alphabet.find(kind)
        if decl is not None:
            flags = decl.flag_set()
    return AbstractSymbol(kind, flags, payload_class, params)


NIL = AbstractSymbol("NIL")


@dataclass(frozen=True)
class ConcretePacket:
    """A fully fielded packet, the wire-level alphabet element."""

    isNull: bool = False
    sourcePort: int = 0
    destinationPort: int = 0
    seqNumber: int = 0
    ackNumber: int = 0
    dataOffset: int | None = None
    reserved: int = 0
    flags: str = ""
    window: int = 0
    checksum: int | None = None
    urgentPointer: int = 0

    @classmethod
    def nil(cls) -> "ConcretePacket":
        return cls(isNull=True)

    def field_value(self, name: str) -> int:
        if name not in PACKET_FIELDS:
            raise ConfigError(f"unknown packet field {name!r}")
        value = getattr(self, name)
        if name == "flags" or name == "isNull":
            raise ConfigError(f"field {name!r} is not numeric")
        return 0 if value is None else int(value)

    def flag_set(self) -> frozenset[str]:
        return frozenset(self.flags)


@dataclass(frozen=True)
class Trace:
    """Paired input/output symbol sequences of equal length."""

    inputs: tuple
    outputs: tuple

    def __post_init__(self):
        if len(self.inputs) != len(self.outputs):
            raise ConfigError(
                f"trace length mismatch: {len(self.inputs)} inputs, {len(self.outputs)} outputs"
            )

    def __len__(self) -> int:
        return len(self.inputs)

    def steps(self):
        return zip(self.inputs, self.outputs)

    def display(self) -> str:
        pairs = (f"{i.display()}/{o.display()}" for i, o in self.steps())
        return " ".join(pairs)


@dataclass(frozen=True)
class ConcreteTrace:
    """Paired packet sequences mirroring an abstract trace step for step."""

    inputs: tuple
    outputs: tuple

    def __post_init__(self):
        if len(self.inputs) != len(self.outputs):
            raise ConfigError("concrete trace length mismatch")

    def __len__(self) -> int:
        return len(self.inputs)


@dataclass(frozen=True)
class SymbolDecl:
    """One alphabet entry: name, flag letters, payload class, param fields."""

    kind: str
    flags: str = ""
    payload_class: int = 0
    fields: tuple = ("seqNumber", "ackNumber")

    def flag_set(self) -> frozenset[str]:
        return frozenset(self.flags)

    def symbol(self) -> AbstractSymbol:
        if self.kind == "NIL":
            return NIL
        return AbstractSymbol(
            self.kind,
            self.flag_set(),
            self.payload_class,
            tuple(WILDCARD for _ in self.fields),
        )


class AlphabetConfig:
    """Declared input and output symbol lists.

    Declaration order is canonical everywhere ties must be broken:
    counterexample ordering, DOT output, and the lexicographic order of
    synthesis term vectors.
    """

    def __init__(self, name: str, inputs, outputs):
        self.name = name
        self.inputs: tuple[SymbolDecl, ...] = tuple(inputs)
        self.outputs: tuple[SymbolDecl, ...] = tuple(outputs)
        if not self.inputs:
            raise ConfigError("alphabet declares no input symbols")
        names_in = [d.kind for d in self.inputs]
        names_out = [d.kind for d in self.outputs]
        if len(set(names_in)) != len(names_in) or len(set(names_out)) != len(names_out):
            raise ConfigError("duplicate symbol names in alphabet")
        if not any(d.kind == "NIL" for d in self.outputs):
            self.outputs = self.outputs + (SymbolDecl("NIL", fields=()),)

    def input_symbols(self) -> tuple[AbstractSymbol, ...]:
        return tuple(d.symbol() for d in self.inputs)

    def output_symbols(self) -> tuple[AbstractSymbol, ...]:
        return tuple(d.symbol() for d in self.outputs)

    def find(self, kind: str) -> SymbolDecl | None:
        for decl in self.inputs + self.outputs:
            if decl.kind == kind:
                return decl
        return None

    def decl_for(self, symbol: AbstractSymbol, direction: str) -> SymbolDecl:
        decls = self.inputs if direction == "input" else self.outputs
        for decl in decls:
            if decl.kind == symbol.kind:
                return decl
        raise ConfigError(f"{symbol.kind} is not a declared {direction} symbol")

    def match(self, flag_set: frozenset[str], direction: str) -> SymbolDecl | None:
        """Find the declared symbol for a packet's flag letters."""
        primary = self.outputs if direction == "output" else self.inputs
        secondary = self.inputs if direction == "output" else self.outputs
        for decl in primary + secondary:
            if decl.kind != "NIL" and decl.flag_set() == flag_set:
                return decl
        return None

    def to_text(self) -> str:
        lines = ["alphabet v1", f"name {self.name}"]
        for direction, decls in (("input", self.inputs), ("output", self.outputs)):
            for d in decls:
                if d.kind == "NIL":
                    lines.append(f"{direction} NIL")
                    continue
                parts = [direction, d.kind, f"flags={d.flags}", f"class={d.payload_class}"]
                if d.fields:
                    parts.append("fields=" + ",".join(d.fields))
                lines.append(" ".join(parts))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "AlphabetConfig":
        lines = text.splitlines()
        if not lines or not lines[0].strip().startswith("alphabet v"):
            raise FormatError("missing 'alphabet v1' header", line=1)
        version = lines[0].strip().split("v", 1)[1]
        if version != "1":
            raise FormatError(f"unsupported alphabet version {version}", line=1)
        name = "alphabet"
        inputs: list[SymbolDecl] = []
        outputs: list[SymbolDecl] = []
        for no, raw in enumerate(lines[1:], start=2):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "name":
                name = parts[1]
                continue
            if parts[0] not in ("input", "output"):
                raise FormatError(f"unknown directive {parts[0]!r}", line=no)
            if len(parts) < 2:
                raise FormatError("symbol declaration lacks a name", line=no)
            kind = parts[1]
            flags = ""
            payload_class = 0
            fields: tuple = ()
            if kind != "NIL":
                fields = ("seqNumber", "ackNumber")
            for opt in parts[2:]:
                if "=" not in opt:
                    raise FormatError(f"bad option {opt!r}", line=no)
                key, value = opt.split("=", 1)
                if key == "flags":
                    flags = value
                elif key == "class":
                    try:
                        payload_class = int(value)
                    except ValueError:
                        raise FormatError(f"class {value!r} not an integer", line=no)
                elif key == "fields":
                    fields = tuple(f for f in value.split(",") if f)
                else:
                    raise FormatError(f"unknown option {key!r}", line=no)
            decl = SymbolDecl(kind, flags, payload_class, fields)
            (inputs if parts[0] == "input" else outputs).append(decl)
        if not inputs:
            raise FormatError("alphabet declares no input symbols")
        return cls(name, inputs, outputs)


def tcp_alphabet() -> AlphabetConfig:
    """The seven-symbol TCP alphabet used by the bundled fixtures."""
    inputs = [
        SymbolDecl("SYN", "S", 0),
        SymbolDecl("SYN+ACK", "SA", 0),
        SymbolDecl("ACK", "A", 0),
        SymbolDecl("ACK+PSH", "PA", 1),
        SymbolDecl("FIN+ACK", "FA", 0),
        SymbolDecl("RST", "R", 0),
        SymbolDecl("ACK+RST", "RA", 0),
    ]
    outputs = [
        SymbolDecl("ACK+SYN", "SA", 0),
        SymbolDecl("ACK", "A", 0),
        SymbolDecl("FIN+ACK", "FA", 0),
        SymbolDecl("ACK+RST", "RA", 0),
        SymbolDecl("NIL", fields=()),
    ]
    return AlphabetConfig("tcp7", inputs, outputs)


BUILTIN_ALPHABETS = {"tcp": tcp_alphabet, "tcp7": tcp_alphabet}


def load_alphabet(ref: str) -> AlphabetConfig:
    """Load an alphabet from a builtin name or a document path."""
    if ref in BUILTIN_ALPHABETS:
        return BUILTIN_ALPHABETS[ref]()
    try:
        with open(ref, "r", encoding="utf-8") as fh:
            return AlphabetConfig.from_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read alphabet {ref!r}: {exc}") from exc
