"""Post-learning analyses over models.

Cross-implementation diffing, safety checking against monitor automata,
randomized quantitative checking of extended machines, and enrichment
of nondeterminism reports with replay statistics.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field

from .errors import AlphabetMismatchError, ConfigError, FormatError
from .mealy import ExtendedMealyMachine, MealyMachine, run, run_extended
from .symbols import AbstractSymbol, Trace


# --- model diff ----------------------------------------------------------------


@dataclass(frozen=True)
class DiffExample:
    inputs: tuple
    outputs_a: tuple
    outputs_b: tuple

    def display(self) -> str:
        word = " ".join(s.display() for s in self.inputs)
        out_a = " ".join(s.display() for s in self.outputs_a)
        out_b = " ".join(s.display() for s in self.outputs_b)
        return f"word: {word}\n  a: {out_a}\n  b: {out_b}"


@dataclass
class DiffReport:
    verdict: str
    counterexamples: list
    a_states: int
    a_transitions: int
    b_states: int
    b_transitions: int
    table: list = field(default_factory=list)

    def differing(self) -> bool:
        return self.verdict == "differing"

    def to_text(self) -> str:
        lines = [
            "diff-report v1",
            f"verdict {self.verdict}",
            f"a states={self.a_states} transitions={self.a_transitions}",
            f"b states={self.b_states} transitions={self.b_transitions}",
        ]
        for ex in self.counterexamples:
            lines.append(ex.display())
        if self.table:
            lines.append("differing transitions (access word, symbol, a output, b output):")
            for access, sym, oa, ob in self.table:
                word = " ".join(s.display() for s in access) or "(initial)"
                lines.append(f"  {word} | {sym.display()} | {oa.display()} | {ob.display()}")
        return "\n".join(lines) + "\n"


def diff(a: MealyMachine, b: MealyMachine, max_examples: int = 3) -> DiffReport:
    """Compare two machines over the product automaton.

    Counterexamples come out shortest-first in the canonical symbol
    order, each replayed on both machines.
    """
    if set(a.inputs) != set(b.inputs):
        raise AlphabetMismatchError("models have different input alphabets")
    examples = []
    table = []
    seen = {(a.initial, b.initial)}
    queue = deque([((a.initial, b.initial), ())])
    while queue and len(examples) < max_examples:
        (sa, sb), word = queue.popleft()
        for sym in a.inputs:
            ta, oa = a.step(sa, sym)
            tb, ob = b.step(sb, sym)
            if oa != ob:
                inputs = word + (sym,)
                table.append((word, sym, oa, ob))
                if len(examples) < max_examples:
                    examples.append(
                        DiffExample(inputs, tuple(run(a, inputs)), tuple(run(b, inputs)))
                    )
            pair = (ta, tb)
            if pair not in seen:
                seen.add(pair)
                queue.append((pair, word + (sym,)))
    verdict = "differing" if examples else "equivalent"
    return DiffReport(
        verdict, examples,
        a.n_states(), a.n_transitions(), b.n_states(), b.n_transitions(),
        table,
    )


def diff_overlay_dot(a: MealyMachine, b: MealyMachine) -> str:
    """DOT of machine a with transitions that disagree with b in red."""
    if set(a.inputs) != set(b.inputs):
        raise AlphabetMismatchError("models have different input alphabets")
    differing = set()
    seen = {(a.initial, b.initial)}
    queue = deque([(a.initial, b.initial)])
    while queue:
        sa, sb = queue.popleft()
        for sym in a.inputs:
            ta, oa = a.step(sa, sym)
            tb, ob = b.step(sb, sym)
            if oa != ob:
                differing.add((sa, sym))
            if (ta, tb) not in seen:
                seen.add((ta, tb))
                queue.append((ta, tb))
    lines = [
        "digraph diff {",
        "  rankdir=LR;",
        "  node [shape=circle];",
        "  __start [shape=point];",
        f"  __start -> s{a.initial};",
    ]
    for s in a.states:
        lines.append(f'  s{s} [label="s{s}"];')
    index = {sym: i for i, sym in enumerate(a.inputs)}
    for s in a.states:
        for sym in sorted(a.inputs, key=index.get):
            t = a.transition[(s, sym)]
            o = a.output[(s, sym)]
            attrs = f'label="{sym.display()} / {o.display()}"'
            if (s, sym) in differing:
                attrs += ", color=red, fontcolor=red"
            lines.append(f"  s{s} -> s{t} [{attrs}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


# --- safety monitors -------------------------------------------------------------


@dataclass(frozen=True)
class MonitorRule:
    state: str
    predicates: tuple          # (("in"|"out", "=="|"!=", kind), ...)
    target: str

    def matches(self, in_sym: AbstractSymbol, out_sym: AbstractSymbol) -> bool:
        for side, op, kind in self.predicates:
            sym = in_sym if side == "in" else out_sym
            if op == "==" and sym.kind != kind:
                return False
            if op == "!=" and sym.kind == kind:
                return False
        return True


class MonitorAutomaton:
    """Deterministic finite-word monitor over (input, output) pairs.

    Rules are first-match-wins; a step with no matching rule means the
    monitor is not total over the model's alphabet, which is an error.
    Sink states are absorbing and mark the violation.
    """

    def __init__(self, name, states, initial, sinks, rules, description=""):
        self.name = name
        self.states = tuple(states)
        self.initial = initial
        self.sinks = frozenset(sinks)
        self.rules = tuple(rules)
        self.description = description
        if initial not in self.states:
            raise ConfigError(f"monitor start state {initial!r} not declared")
        for rule in self.rules:
            if rule.state not in self.states or rule.target not in self.states:
                raise ConfigError(f"monitor rule uses undeclared state: {rule}")

    def step(self, state: str, in_sym, out_sym) -> str:
        if state in self.sinks:
            return state
        for rule in self.rules:
            if rule.state == state and rule.matches(in_sym, out_sym):
                return rule.target
        raise ConfigError(
            f"monitor {self.name!r} is not total: no rule in state {state!r} "
            f"for {in_sym.display()}/{out_sym.display()}"
        )

    def check_total(self, machine: MealyMachine) -> None:
        for state in self.states:
            if state in self.sinks:
                continue
            for in_sym in machine.inputs:
                for out_sym in machine.outputs:
                    self.step(state, in_sym, out_sym)

    def to_text(self) -> str:
        lines = ["monitor v1", f"name {self.name}"]
        if self.description:
            lines.append(f"description {self.description}")
        for s in self.states:
            lines.append(f"state {s}")
        lines.append(f"start {self.initial}")
        for s in sorted(self.sinks):
            lines.append(f"sink {s}")
        for rule in self.rules:
            preds = " ".join(
                f"{side}{'=' if op == '==' else '!='}{kind}" for side, op, kind in rule.predicates
            ) or "any"
            lines.append(f"on {rule.state} {preds} -> {rule.target}")
        return "\n".join(lines) + "\n"


def _parse_predicates(tokens, line_no):
    if tokens == ["any"]:
        return ()
    preds = []
    for tok in tokens:
        if "!=" in tok:
            side, kind = tok.split("!=", 1)
            op = "!="
        elif "=" in tok:
            side, kind = tok.split("=", 1)
            op = "=="
        else:
            raise FormatError(f"bad predicate {tok!r}", line=line_no)
        if side not in ("in", "out"):
            raise FormatError(f"predicate side must be in/out, got {side!r}", line=line_no)
        preds.append((side, op, kind))
    return tuple(preds)


def load_monitors(text: str) -> list[MonitorAutomaton]:
    """Parse one or more monitor blocks from a document."""
    lines = text.splitlines()
    if not lines or not lines[0].strip().startswith("monitor v"):
        raise FormatError("missing 'monitor v1' header", line=1)
    monitors = []
    block: list[tuple[int, str]] = []

    def finish(block):
        name = "monitor"
        description = ""
        states: list[str] = []
        initial = None
        sinks: list[str] = []
        rules: list[MonitorRule] = []
        for no, line in block:
            parts = line.split()
            if parts[0] == "name":
                name = parts[1]
            elif parts[0] == "description":
                description = line.partition(" ")[2]
            elif parts[0] == "state":
                states.append(parts[1])
            elif parts[0] == "start":
                initial = parts[1]
            elif parts[0] == "sink":
                sinks.append(parts[1])
            elif parts[0] == "on":
                if "->" not in parts:
                    raise FormatError("monitor rule lacks '->'", line=no)
                arrow = parts.index("->")
                rules.append(
                    MonitorRule(parts[1], _parse_predicates(parts[2:arrow], no), parts[arrow + 1])
                )
            else:
                raise FormatError(f"unknown monitor directive {parts[0]!r}", line=no)
        if initial is None:
            raise FormatError("monitor lacks a start state")
        monitors.append(MonitorAutomaton(name, states, initial, sinks, rules, description))

    for no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("monitor v"):
            if line.split("v", 1)[1] != "1":
                raise FormatError("unsupported monitor version", line=no)
            if block:
                finish(block)
                block = []
            continue
        block.append((no, line))
    if block:
        finish(block)
    return monitors


@dataclass(frozen=True)
class SafetyProperty:
    name: str
    monitor: MonitorAutomaton
    description: str = ""


@dataclass(frozen=True)
class SafetyResult:
    passed: bool
    violation: Trace | None = None


def check_safety(machine: MealyMachine, prop: SafetyProperty) -> SafetyResult:
    """Product exploration of the model and the monitor.

    A violation is the shortest input word whose (input, output) pair
    sequence drives the monitor into a sink.
    """
    monitor = prop.monitor
    monitor.check_total(machine)
    start = (machine.initial, monitor.initial)
    seen = {start}
    queue = deque([(start, ())])
    while queue:
        (ms, ps), word = queue.popleft()
        for sym in machine.inputs:
            mt, out = machine.step(ms, sym)
            pt = monitor.step(ps, sym, out)
            inputs = word + (sym,)
            if pt in monitor.sinks:
                return SafetyResult(False, Trace(inputs, tuple(run(machine, inputs))))
            pair = (mt, pt)
            if pair not in seen:
                seen.add(pair)
                queue.append((pair, inputs))
    return SafetyResult(True)


# --- quantitative checking --------------------------------------------------------


@dataclass(frozen=True)
class QuantitativeProperty:
    """A pure per-trace predicate over parameterized steps.

    ``applies`` guards vacuity: a run where no sampled trace applies is
    reported as a vacuous pass.
    """

    name: str
    holds: object               # callable(steps) -> bool
    applies: object             # callable(steps) -> bool
    description: str = ""


@dataclass(frozen=True)
class QuantResult:
    passed: bool
    vacuous: bool
    samples: int
    violation: Trace | None = None


def field_not_constant(kind: str, param_index: int, value: int) -> QuantitativeProperty:
    """Holds when some emission of the symbol differs from ``value``."""

    def applies(steps) -> bool:
        return any(out.kind == kind for _, out in steps)

    def holds(steps) -> bool:
        values = [out.params[param_index] for _, out in steps if out.kind == kind]
        return any(v != value for v in values)

    return QuantitativeProperty(
        f"{kind}[{param_index}] is not constant {value}", holds, applies
    )


def response_ack_is_seq_plus_one(out_kind: str = "ACK+SYN") -> QuantitativeProperty:
    """On every step answered by ``out_kind``, ack equals input seq + 1."""

    def applies(steps) -> bool:
        return any(out.kind == out_kind for _, out in steps)

    def holds(steps) -> bool:
        for inp, out in steps:
            if out.kind == out_kind and out.params[1] != inp.params[0] + 1:
                return False
        return True

    return QuantitativeProperty(f"{out_kind} ack = seq + 1", holds, applies)


def check_quantitative(machine: ExtendedMealyMachine, prop: QuantitativeProperty,
                       adapter_handle=None, samples: int = 1000,
                       max_len: int = 12, seed: int = 0) -> QuantResult:
    """Randomized testing of an extended machine against a predicate.

    Samples parameterized input words, runs the machine (or replays on
    the SUL when an adapter is supplied), and returns the first
    violating trace.  No violation is not a proof; the result reports
    how many samples were drawn, and whether the predicate ever applied.
    """
    rng = random.Random(seed)
    inputs = machine.skeleton.inputs
    applied = False
    for _ in range(samples):
        length = rng.randint(1, max_len)
        word = []
        for _ in range(length):
            sym = rng.choice(inputs)
            labels = machine.input_params.get(sym, ())
            word.append(sym.with_params(tuple(rng.randrange(0, 9000) for _ in labels)))
        if adapter_handle is not None:
            adapter_handle.query([w.erased() for w in word])
            record = adapter_handle.last_record
            steps = list(zip(word, record.abstract.outputs))
        else:
            outs = run_extended(machine, word)
            steps = list(zip(word, outs))
        if prop.applies(steps):
            applied = True
            if not prop.holds(steps):
                trace = Trace(tuple(word), tuple(out for _, out in steps))
                return QuantResult(False, False, samples, trace)
    return QuantResult(True, not applied, samples)


# --- nondeterminism enrichment -----------------------------------------------------


@dataclass
class EnrichedNondeterminismReport:
    word: tuple
    frequencies: dict
    replays: int
    sample_runs: tuple

    def word_text(self) -> str:
        return " ".join(s.display() for s in self.word)

    def to_text(self) -> str:
        lines = ["nondeterminism-report v1", f"word {self.word_text()}", f"replays {self.replays}"]
        for answer, freq in sorted(self.frequencies.items(), key=lambda kv: -kv[1]):
            text = " ".join(s.display() for s in answer)
            lines.append(f"answer {freq:.4f} {text}")
        return "\n".join(lines) + "\n"


def report_nondeterminism(report, adapter_handle, replays: int = 200) -> EnrichedNondeterminismReport:
    """Re-execute the offending word and attach the empirical answer
    distribution plus the concrete logs of two differing runs."""
    counts: dict = {}
    records: dict = {}
    for _ in range(replays):
        outs = tuple(adapter_handle.query(report.word))
        counts[outs] = counts.get(outs, 0) + 1
        if outs not in records:
            records[outs] = adapter_handle.last_record
    total = sum(counts.values())
    frequencies = {ans: n / total for ans, n in counts.items()}
    distinct = list(records.values())[:2]
    return EnrichedNondeterminismReport(
        word=tuple(report.word),
        frequencies=frequencies,
        replays=replays,
        sample_runs=tuple(distinct),
    )
