"""Mealy machines and their register-extended variant.

Machines are immutable after construction: build them through
``MealyMachine.build`` which validates totality, prunes unreachable
states, and renumbers states in breadth-first order so that diagrams
and documents come out identical on every run.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .errors import AlphabetMismatchError, ConfigError, FormatError, UnknownSymbolError
from .symbols import NIL, AbstractSymbol, Trace, parse_symbol


class MealyMachine:
    """A finite deterministic transducer.

    ``transition`` and ``output`` are total over states x input alphabet;
    state ids are the integers 0..n-1 with 0 the initial state.
    """

    def __init__(self, states, initial, inputs, outputs, transition, output):
        self.states = tuple(states)
        self.initial = initial
        self.inputs = tuple(inputs)
        self.outputs = tuple(outputs)
        self.transition = dict(transition)
        self.output = dict(output)
        self._validate()

    def _validate(self):
        state_set = set(self.states)
        if self.initial not in state_set:
            raise ConfigError("initial state is not a declared state")
        for s in self.states:
            for a in self.inputs:
                if (s, a) not in self.transition or (s, a) not in self.output:
                    raise ConfigError(f"machine not total: missing entry for ({s}, {a.display()})")
                if self.transition[(s, a)] not in state_set:
                    raise ConfigError(f"transition from ({s}, {a.display()}) targets unknown state")
        if len(self.transition) != len(self.states) * len(self.inputs):
            raise ConfigError("machine has transitions outside states x alphabet")

    @classmethod
    def build(cls, initial, inputs, outputs, transition, output) -> "MealyMachine":
        """Construct from raw maps, pruning unreachable states and
        renumbering everything in BFS order from the initial state."""
        inputs = tuple(inputs)
        order = [initial]
        seen = {initial}
        queue = deque([initial])
        while queue:
            s = queue.popleft()
            for a in inputs:
                if (s, a) not in transition:
                    raise ConfigError(f"machine not total at ({s}, {a.display()})")
                t = transition[(s, a)]
                if t not in seen:
                    seen.add(t)
                    order.append(t)
                    queue.append(t)
        rename = {old: new for new, old in enumerate(order)}
        new_transition = {}
        new_output = {}
        for old in order:
            for a in inputs:
                new_transition[(rename[old], a)] = rename[transition[(old, a)]]
                new_output[(rename[old], a)] = output[(old, a)]
        out_alpha = []
        for o in outputs:
            if o not in out_alpha:
                out_alpha.append(o)
        for value in new_output.values():
            if value not in out_alpha:
                out_alpha.append(value)
        return cls(range(len(order)), 0, inputs, out_alpha, new_transition, new_output)

    def n_states(self) -> int:
        return len(self.states)

    def n_transitions(self) -> int:
        return len(self.transition)

    def step(self, state, symbol):
        key = (state, symbol.erased())
        if key not in self.transition:
            raise UnknownSymbolError(f"{symbol.display()} is outside the input alphabet")
        return self.transition[key], self.output[key]

    def walk(self, inputs):
        """States and outputs along an input word, starting at initial."""
        state = self.initial
        outs = []
        for sym in inputs:
            state, out = self.step(state, sym)
            outs.append(out)
        return state, outs

    def structurally_equal(self, other: "MealyMachine") -> bool:
        return (
            self.states == other.states
            and self.initial == other.initial
            and self.inputs == other.inputs
            and self.transition == other.transition
            and self.output == other.output
        )


def run(machine: MealyMachine, inputs) -> list:
    """The unique output word the machine produces on an input word."""
    _, outs = machine.walk(inputs)
    return outs


@dataclass(frozen=True)
class EquivalenceVerdict:
    equivalent: bool
    counterexample: Trace | None = None


def equivalent(a: MealyMachine, b: MealyMachine) -> EquivalenceVerdict:
    """Product-machine equivalence check.

    Returns the shortest distinguishing input word when the machines
    differ; ties are broken by the declared symbol order, so the result
    is deterministic.
    """
    if set(a.inputs) != set(b.inputs):
        raise AlphabetMismatchError("machines have different input alphabets")
    order = a.inputs
    start = (a.initial, b.initial)
    seen = {start}
    queue = deque([(start, ())])
    while queue:
        (sa, sb), word = queue.popleft()
        for sym in order:
            ta, oa = a.step(sa, sym)
            tb, ob = b.step(sb, sym)
            if oa != ob:
                inputs = word + (sym,)
                return EquivalenceVerdict(False, Trace(inputs, tuple(run(a, inputs))))
            pair = (ta, tb)
            if pair not in seen:
                seen.add(pair)
                queue.append((pair, word + (sym,)))
    return EquivalenceVerdict(True)


def count_traces(alphabet_size: int, max_len: int) -> int:
    """Number of input words of length 1..max_len over the alphabet."""
    if alphabet_size < 1 or max_len < 1:
        raise ConfigError("alphabet_size and max_len must be >= 1")
    # Python integers are arbitrary precision, so the sum is exact for
    # any size; no wraparound is possible.
    return sum(alphabet_size**i for i in range(1, max_len + 1))


@dataclass(frozen=True)
class Term:
    """A register-update or output term.

    ``source`` names a register, or an input parameter when
    ``from_input`` is set.  ``offset`` is 0 or 1 in the synthesis
    grammar; the simulator side may use wider offsets internally.
    """

    source: str
    offset: int = 0
    from_input: bool = False

    def display(self) -> str:
        return f"{self.source}+{self.offset}" if self.offset else self.source

    @classmethod
    def parse(cls, text: str, registers, params=()) -> "Term":
        text = text.strip()
        offset = 0
        if "+" in text:
            base, off = text.rsplit("+", 1)
            # Register names may themselves contain '+': only treat the
            # suffix as an offset when it is a bare integer.
            if off.strip().isdigit():
                text, offset = base.strip(), int(off)
        if text in registers:
            return cls(text, offset, from_input=False)
        if text in params:
            return cls(text, offset, from_input=True)
        raise FormatError(f"term {text!r} names no register or parameter")


class ExtendedMealyMachine:
    """A Mealy machine whose transitions update registers and whose
    output symbols carry parameters computed from registers."""

    def __init__(self, skeleton, registers, input_params, output_params,
                 updates, output_terms, initial_policy="zero"):
        self.skeleton = skeleton
        self.registers = tuple(registers)
        self.input_params = {k.erased(): tuple(v) for k, v in input_params.items()}
        self.output_params = {k.erased(): tuple(v) for k, v in output_params.items()}
        self.updates = dict(updates)
        self.output_terms = dict(output_terms)
        self.initial_policy = initial_policy
        self._validate()

    def _validate(self):
        for s in self.skeleton.states:
            for a in self.skeleton.inputs:
                key = (s, a)
                ups = self.updates.get(key)
                if ups is None or len(ups) != len(self.registers):
                    raise ConfigError(f"transition ({s}, {a.display()}) lacks one update per register")
                out = self.skeleton.output[key]
                arity = len(self.output_params.get(out.erased(), ()))
                terms = self.output_terms.get(key, ())
                if len(terms) != arity:
                    raise ConfigError(
                        f"transition ({s}, {a.display()}) needs {arity} output terms, has {len(terms)}"
                    )
                for t in terms:
                    if t.from_input:
                        raise ConfigError("output terms must be register-valued")

    def initial_registers(self) -> dict:
        return {r: 0 for r in self.registers}

    def eval_term(self, term: Term, registers: dict, params: dict) -> int:
        base = params[term.source] if term.from_input else registers[term.source]
        return base + term.offset

    def step(self, state, symbol: AbstractSymbol, registers: dict):
        """Apply one parameterized input; returns (state, output, registers)."""
        erased = symbol.erased()
        key = (state, erased)
        if key not in self.skeleton.transition:
            raise UnknownSymbolError(f"{symbol.display()} is outside the input alphabet")
        labels = self.input_params.get(erased, ())
        values = [p for p in symbol.params]
        params = {}
        for label, value in zip(labels, values):
            if value == "?":
                raise ConfigError(f"input {symbol.display()} must carry concrete parameters")
            params[label] = int(value)
        new_regs = {
            reg: self.eval_term(term, registers, params)
            for reg, term in zip(self.registers, self.updates[key])
        }
        out = self.skeleton.output[key]
        terms = self.output_terms.get(key, ())
        if terms:
            out_values = tuple(self.eval_term(t, new_regs, params) for t in terms)
            out = out.with_params(out_values)
        return self.skeleton.transition[key], out, new_regs


def run_extended(machine: ExtendedMealyMachine, inputs, initial_registers=None) -> list:
    """Outputs of the extended machine on parameterized concrete inputs."""
    registers = dict(initial_registers) if initial_registers else machine.initial_registers()
    missing = set(machine.registers) - set(registers)
    if missing:
        raise ConfigError(f"initial values missing for registers {sorted(missing)}")
    state = machine.skeleton.initial
    outs = []
    for sym in inputs:
        state, out, registers = machine.step(state, sym, registers)
        outs.append(out)
    return outs


# --- rendering -------------------------------------------------------------

def _sorted_edges(machine: MealyMachine):
    index = {a: i for i, a in enumerate(machine.inputs)}
    for s in machine.states:
        for a in sorted(machine.inputs, key=index.get):
            yield s, a


def to_dot(machine) -> str:
    """Deterministic DOT rendering; extended machines get their update
    and output terms on the edge labels."""
    extended = isinstance(machine, ExtendedMealyMachine)
    skel = machine.skeleton if extended else machine
    lines = [
        "digraph mealy {",
        "  rankdir=LR;",
        "  node [shape=circle];",
        "  __start [shape=point];",
        f"  __start -> s{skel.initial};",
    ]
    for s in skel.states:
        lines.append(f'  s{s} [label="s{s}"];')
    for s, a in _sorted_edges(skel):
        t = skel.transition[(s, a)]
        out = skel.output[(s, a)]
        if not extended:
            label = f"{a.display()} / {out.display()}"
        else:
            in_labels = machine.input_params.get(a, ())
            in_disp = a.with_params(in_labels).display() if in_labels else a.display()
            terms = machine.output_terms.get((s, a), ())
            out_disp = out.with_params(tuple(t_.display() for t_ in terms)).display() if terms else out.display()
            ups = ", ".join(
                f"{reg} := {term.display()}"
                for reg, term in zip(machine.registers, machine.updates[(s, a)])
            )
            label = f"{in_disp} / {out_disp}\\n{ups}"
        lines.append(f'  s{s} -> s{t} [label="{label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


# --- model documents -------------------------------------------------------

DOC_MEALY = "mealy"
DOC_MEALY_EXT = "mealy-ext"
_SUPPORTED_VERSION = 1


def serialize(machine) -> str:
    """Render a machine as a versioned, self-describing text document."""
    if isinstance(machine, ExtendedMealyMachine):
        return _serialize_extended(machine)
    lines = [f"{DOC_MEALY} v{_SUPPORTED_VERSION}"]
    lines.append("inputs " + " ".join(a.display() for a in machine.inputs))
    lines.append("outputs " + " ".join(o.display() for o in machine.outputs))
    lines.append(f"states {machine.n_states()}")
    lines.append(f"initial s{machine.initial}")
    for s, a in _sorted_edges(machine):
        t = machine.transition[(s, a)]
        o = machine.output[(s, a)]
        lines.append(f"t s{s} {a.display()} s{t} {o.display()}")
    return "\n".join(lines) + "\n"


def _serialize_extended(machine: ExtendedMealyMachine) -> str:
    skel = machine.skeleton
    lines = [f"{DOC_MEALY_EXT} v{_SUPPORTED_VERSION}"]
    lines.append("registers " + " ".join(machine.registers))
    lines.append("inputs " + " ".join(a.display() for a in skel.inputs))
    lines.append("outputs " + " ".join(o.display() for o in skel.outputs))
    for a in skel.inputs:
        labels = machine.input_params.get(a, ())
        if labels:
            lines.append(f"params {a.display()} " + " ".join(labels))
    for o in skel.outputs:
        labels = machine.output_params.get(o, ())
        if labels:
            lines.append(f"outparams {o.display()} " + " ".join(labels))
    lines.append(f"states {skel.n_states()}")
    lines.append(f"initial s{skel.initial}")
    lines.append(f"init-policy {machine.initial_policy}")
    for s, a in _sorted_edges(skel):
        t = skel.transition[(s, a)]
        o = skel.output[(s, a)]
        ups = " ".join(
            f"{reg}:={term.display()}"
            for reg, term in zip(machine.registers, machine.updates[(s, a)])
        )
        outs = " ".join(t_.display() for t_ in machine.output_terms.get((s, a), ()))
        line = f"t s{s} {a.display()} s{t} {o.display()} | {ups}"
        if outs:
            line += f" | {outs}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def _parse_state(token: str, n_states: int, line: int) -> int:
    if not token.startswith("s") or not token[1:].isdigit():
        raise FormatError(f"bad state name {token!r}", line=line)
    value = int(token[1:])
    if value >= n_states:
        raise FormatError(f"state {token} is not declared (states {n_states})", line=line)
    return value


def deserialize(text: str):
    """Parse a model document back into a machine; round-trips serialize."""
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty document", line=1)
    header = lines[0].split()
    if len(header) != 2 or not header[1].startswith("v"):
        raise FormatError("malformed document header", line=1)
    doctype, version = header[0], header[1][1:]
    if doctype not in (DOC_MEALY, DOC_MEALY_EXT):
        raise FormatError(f"not a model document: {doctype!r}", line=1)
    if not version.isdigit() or int(version) > _SUPPORTED_VERSION:
        raise FormatError(f"unsupported document version {version}", line=1)

    inputs: list[AbstractSymbol] = []
    outputs: list[AbstractSymbol] = []
    registers: tuple = ()
    in_params: dict = {}
    out_params: dict = {}
    n_states = None
    initial = None
    policy = "zero"
    transitions = []

    for no, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        word = parts[0]
        if word == "inputs":
            inputs = [parse_symbol(t) for t in parts[1:]]
        elif word == "outputs":
            outputs = [parse_symbol(t) for t in parts[1:]]
        elif word == "registers":
            registers = tuple(parts[1:])
        elif word == "params":
            in_params[parse_symbol(parts[1])] = tuple(parts[2:])
        elif word == "outparams":
            out_params[parse_symbol(parts[1])] = tuple(parts[2:])
        elif word == "states":
            n_states = int(parts[1])
        elif word == "initial":
            if n_states is None:
                raise FormatError("initial before states", line=no)
            initial = _parse_state(parts[1], n_states, no)
        elif word == "init-policy":
            policy = parts[1]
        elif word == "t":
            transitions.append((no, parts[1:], raw))
        else:
            raise FormatError(f"unknown directive {word!r}", line=no)

    if n_states is None or initial is None or not inputs:
        raise FormatError("document lacks states, initial, or inputs")

    transition = {}
    output = {}
    updates = {}
    output_terms = {}
    param_labels = {sym: labels for sym, labels in in_params.items()}
    for no, parts, raw in transitions:
        if doctype == DOC_MEALY:
            if len(parts) != 4:
                raise FormatError("transition needs: source symbol target output", line=no)
            src = _parse_state(parts[0], n_states, no)
            sym = parse_symbol(parts[1])
            dst = _parse_state(parts[2], n_states, no)
            out = parse_symbol(parts[3])
            transition[(src, sym)] = dst
            output[(src, sym)] = out
        else:
            body = raw.strip()[2:]
            segments = [seg.strip() for seg in body.split("|")]
            head = segments[0].split()
            if len(head) != 4:
                raise FormatError("transition needs: source symbol target output", line=no)
            src = _parse_state(head[0], n_states, no)
            sym = parse_symbol(head[1])
            dst = _parse_state(head[2], n_states, no)
            out = parse_symbol(head[3])
            transition[(src, sym)] = dst
            output[(src, sym)] = out
            if len(segments) < 2:
                raise FormatError("extended transition lacks update terms", line=no)
            labels = param_labels.get(sym, ())
            ups = []
            for chunk in segments[1].split():
                if ":=" not in chunk:
                    raise FormatError(f"bad update {chunk!r}", line=no)
                reg, term_text = chunk.split(":=", 1)
                if reg not in registers:
                    raise FormatError(f"update names unknown register {reg!r}", line=no)
                ups.append(Term.parse(term_text, registers, labels))
            updates[(src, sym)] = tuple(ups)
            if len(segments) > 2 and segments[2]:
                output_terms[(src, sym)] = tuple(
                    Term.parse(t, registers, ()) for t in segments[2].split()
                )

    skeleton = MealyMachine(range(n_states), initial, inputs, outputs, transition, output)
    if doctype == DOC_MEALY:
        return skeleton
    return ExtendedMealyMachine(
        skeleton, registers, in_params, out_params, updates, output_terms, policy
    )


def save(machine, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(machine))


def load(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return deserialize(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read model {path!r}: {exc}") from exc
