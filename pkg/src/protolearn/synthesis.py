"""Register synthesis from cached concrete traces.

Given a learned skeleton, every transition gets one unknown per register
(its update) and one unknown per output parameter.  Each unknown ranges
over a small term grammar; integer choice variables select among the
terms.  Concrete traces induce linear equations over per-trace register
timelines, and solving for the choice variables yields an extended
machine.  A CEGIS loop validates candidates against fresh SUL traces,
feeding failures back as new positive traces plus negative examples.

The default solver is an exact enumerative search: registers propagate
along each trace as affine values over that trace's unknown initial
registers, equations bind those initials by unification, and branching
only happens on choice variables that actually block an equation.  Ties
among satisfying assignments break toward the lexicographically least
choice vector, so results are deterministic.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .adapter import QueryRecord, abstract
from .errors import ConfigError, SynthesisUnsat, TransportError
from .mealy import ExtendedMealyMachine, MealyMachine, Term
from .symbols import NIL, AbstractSymbol, Trace

# --- parameter declarations --------------------------------------------------


@dataclass(frozen=True)
class ParamSpec:
    label: str
    field: str


@dataclass(frozen=True)
class ParamDecl:
    """Which concrete packet fields each symbol's parameters stand for."""

    inputs: dict
    outputs: dict

    def input_labels(self, kind: str) -> tuple:
        return tuple(spec.label for spec in self.inputs.get(kind, ()))

    def output_labels(self, kind: str) -> tuple:
        return tuple(spec.label for spec in self.outputs.get(kind, ()))

    @classmethod
    def tcp_default(cls, alphabet) -> "ParamDecl":
        seq_ack_in = (ParamSpec("sn", "seqNumber"), ParamSpec("an", "ackNumber"))
        seq_ack_out = (ParamSpec("seq", "seqNumber"), ParamSpec("ack", "ackNumber"))
        inputs = {d.kind: seq_ack_in for d in alphabet.inputs if d.kind != "NIL"}
        outputs = {d.kind: seq_ack_out for d in alphabet.outputs if d.kind != "NIL"}
        return cls(inputs, outputs)

    @classmethod
    def tcp_offset(cls, alphabet) -> "ParamDecl":
        """Synthesize over the offset-like field only."""
        seq_ack_in = (ParamSpec("sn", "seqNumber"), ParamSpec("an", "ackNumber"))
        off = (ParamSpec("off", "dataOffset"),)
        inputs = {d.kind: seq_ack_in for d in alphabet.inputs if d.kind != "NIL"}
        outputs = {d.kind: off for d in alphabet.outputs if d.kind != "NIL"}
        return cls(inputs, outputs)


# --- sketch -------------------------------------------------------------------


@dataclass(frozen=True)
class TermGrammar:
    """Ordered candidate terms, mirroring the choice-variable encoding."""

    registers: tuple
    param_increment: bool = False

    def update_terms(self, param_labels) -> tuple:
        terms = []
        for reg in self.registers:
            terms.append(Term(reg, 0))
            terms.append(Term(reg, 1))
        for label in param_labels:
            terms.append(Term(label, 0, from_input=True))
            if self.param_increment:
                terms.append(Term(label, 1, from_input=True))
        return tuple(terms)

    def output_terms(self) -> tuple:
        terms = []
        for reg in self.registers:
            terms.append(Term(reg, 0))
            terms.append(Term(reg, 1))
        return tuple(terms)


@dataclass(frozen=True)
class Unknown:
    index: int
    kind: str                 # "update" | "output"
    key: tuple                # (state, input symbol)
    register: str | None
    param_index: int | None
    terms: tuple

    def name(self) -> str:
        state, sym = self.key
        if self.kind == "update":
            return f"u[{state},{sym.display()},{self.register}]"
        return f"o[{state},{sym.display()},{self.param_index}]"

    def probe_order(self) -> tuple:
        """Value order for satisfiability searches (not for tie-breaking):
        input-parameter terms first, since they yield concrete values that
        confirm or conflict immediately, while register copies can soak up
        almost anything through the free initial values."""
        params = [i for i, t in enumerate(self.terms) if t.from_input]
        rest = [i for i, t in enumerate(self.terms) if not t.from_input]
        return tuple(params + rest)


class Sketch:
    """A skeleton plus one unknown per update slot and output parameter."""

    def __init__(self, skeleton: MealyMachine, registers, param_decl: ParamDecl,
                 grammar: TermGrammar):
        self.skeleton = skeleton
        self.registers = tuple(registers)
        self.param_decl = param_decl
        self.grammar = grammar
        self.unknowns: list[Unknown] = []
        self.update_unknowns: dict = {}
        self.output_unknowns: dict = {}
        self._build()

    def _transitions(self):
        for s in self.skeleton.states:
            for a in self.skeleton.inputs:
                yield (s, a)

    def _build(self):
        for key in self._transitions():
            _, sym = key
            labels = self.param_decl.input_labels(sym.kind)
            terms = self.grammar.update_terms(labels)
            slots = []
            for reg in self.registers:
                unk = Unknown(len(self.unknowns), "update", key, reg, None, terms)
                self.unknowns.append(unk)
                slots.append(unk)
            self.update_unknowns[key] = tuple(slots)
        out_terms = self.grammar.output_terms()
        for key in self._transitions():
            out = self.skeleton.output[key]
            arity = len(self.param_decl.output_labels(out.kind)) if not out.is_nil() else 0
            slots = []
            for i in range(arity):
                unk = Unknown(len(self.unknowns), "output", key, None, i, out_terms)
                self.unknowns.append(unk)
                slots.append(unk)
            self.output_unknowns[key] = tuple(slots)

    def n_unknowns(self) -> int:
        return len(self.unknowns)


def build_sketch(machine: MealyMachine, registers, param_decl: ParamDecl,
                 param_increment: bool = False) -> Sketch:
    registers = tuple(registers)
    all_labels = set()
    for specs in list(param_decl.inputs.values()) + list(param_decl.outputs.values()):
        labels = [s.label for s in specs]
        if len(set(labels)) != len(labels):
            raise ConfigError("duplicate parameter labels in one symbol")
        all_labels.update(labels)
    if all_labels & set(registers):
        raise ConfigError("parameter labels collide with register names")
    return Sketch(machine, registers, param_decl, TermGrammar(registers, param_increment))


# --- constraint system ---------------------------------------------------------


@dataclass(frozen=True)
class TraceStep:
    key: tuple                 # transition (state, symbol)
    params: dict               # input parameter label -> value
    out_obs: tuple             # ((output param index, observed value), ...)


@dataclass(frozen=True)
class SolverTrace:
    trace_id: int
    steps: tuple


@dataclass(frozen=True)
class NegativeExample:
    """At one output slot of one trace, the term value must differ."""

    trace: SolverTrace
    step: int
    param_index: int
    wrong_value: int


class TraceConstraintSystem:
    def __init__(self, sketch: Sketch, traces, negatives=()):
        self.sketch = sketch
        self.traces = list(traces)
        self.negatives = list(negatives)
        self._tasks = None

    def tasks(self):
        """(trace, negative-or-None, incidence) triples, cached.

        The incidence set holds every choice variable that can influence
        the trace's equations; anything outside it cannot change the
        trace's propagation result.  Tasks are ordered most-constraining
        first (repeated transitions, then observation count) so that the
        search fixes the decisive variables before the absorbent ones.
        """
        if self._tasks is None:
            self._tasks = []
            for trace, neg in _check_tasks(self):
                inc = set()
                keys = []
                n_obs = 0
                for step_no, step in enumerate(trace.steps):
                    keys.append(step.key)
                    for unk in self.sketch.update_unknowns[step.key]:
                        inc.add(unk.index)
                    outs = self.sketch.output_unknowns[step.key]
                    for idx, _ in step.out_obs:
                        inc.add(outs[idx].index)
                        n_obs += 1
                    if neg is not None and neg.step == step_no:
                        inc.add(outs[neg.param_index].index)
                repeats = len(keys) - len(set(keys))
                self._tasks.append(((-repeats, -n_obs, trace.trace_id), trace, neg, frozenset(inc)))
            self._tasks.sort(key=lambda t: t[0])
            self._tasks = [(trace, neg, inc) for _, trace, neg, inc in self._tasks]
        return self._tasks

    def constrained_unknowns(self) -> list[int]:
        seen = set()
        for _, _, inc in self.tasks():
            seen.update(inc)
        return sorted(seen)


def _normalize_trace(sketch: Sketch, entry, trace_id: int) -> SolverTrace:
    """Walk one cached trace along the skeleton, pulling out parameter
    values; rejects traces that leave the skeleton's predicted path."""
    decl = sketch.param_decl
    if isinstance(entry, QueryRecord):
        a_in, a_out = entry.abstract.inputs, entry.abstract.outputs
        get_in = lambda i, specs: {s.label: entry.concrete.inputs[i].field_value(s.field) for s in specs}
        get_out = lambda i, specs: [(j, entry.concrete.outputs[i].field_value(s.field))
                                    for j, s in enumerate(specs)]
    elif isinstance(entry, Trace):
        a_in, a_out = entry.inputs, entry.outputs
        get_in = lambda i, specs: {s.label: int(a_in[i].params[j]) for j, s in enumerate(specs)}
        get_out = lambda i, specs: [(j, int(a_out[i].params[j])) for j, s in enumerate(specs)]
    else:
        raise ConfigError(f"cannot use {type(entry).__name__} as a synthesis trace")

    state = sketch.skeleton.initial
    steps = []
    for i, (sym_in, sym_out) in enumerate(zip(a_in, a_out)):
        key = (state, sym_in.erased())
        if key not in sketch.skeleton.transition:
            raise ConfigError(f"trace exits the skeleton path at step {i}: "
                              f"no transition for {sym_in.display()}")
        predicted = sketch.skeleton.output[key]
        if predicted != sym_out.erased():
            raise ConfigError(
                f"trace exits the skeleton path at step {i}: machine outputs "
                f"{predicted.display()}, trace has {sym_out.display()}"
            )
        in_specs = decl.inputs.get(sym_in.kind, ())
        out_specs = decl.outputs.get(sym_out.kind, ()) if not sym_out.is_nil() else ()
        steps.append(TraceStep(key, get_in(i, in_specs), tuple(get_out(i, out_specs))))
        state = sketch.skeleton.transition[key]
    return SolverTrace(trace_id, tuple(steps))


def generate_constraints(sketch: Sketch, traces, negatives=()) -> TraceConstraintSystem:
    solver_traces = [_normalize_trace(sketch, t, i) for i, t in enumerate(traces)]
    return TraceConstraintSystem(sketch, solver_traces, negatives)


# --- propagation engine ---------------------------------------------------------

# A register value during propagation is one of:
#   ("const", c, deps)            a known integer
#   ("init", var, offset, deps)   an unbound initial value plus offset
#   ("top", blockers)             depends on unassigned choice variables
# deps is the frozenset of choice variables the value was computed from;
# it is what conflict-directed backjumping feeds on.
_TOP = "top"
_NO_DEPS = frozenset()

# Hard cap on search nodes per satisfiability probe, a guard against
# pathological trace sets rather than a tuning knob.
SOLVER_NODE_BUDGET = 2_000_000

# How many repeat traces seed the solver core; more just slows the
# witness search without adding constraint content.
SOLVER_SEED_CAP = 40


def _value_add(value, offset, extra_deps):
    tag = value[0]
    if tag == "const":
        deps = value[2] | extra_deps if extra_deps else value[2]
        return ("const", value[1] + offset, deps)
    if tag == "init":
        deps = value[3] | extra_deps if extra_deps else value[3]
        return ("init", value[1], value[2] + offset, deps)
    return value


class _TraceState:
    """Propagation result for a single trace under a partial assignment."""

    __slots__ = ("conflict", "conflict_deps", "blockers", "bindings", "exclusions")

    def __init__(self):
        self.conflict = False
        self.conflict_deps: frozenset = _NO_DEPS
        self.blockers: set[int] = set()
        self.bindings: dict = {}
        self.exclusions: dict = {}


def _propagate(sketch: Sketch, trace: SolverTrace, assignment: dict,
               negative: NegativeExample | None = None,
               track_deps: bool = False) -> _TraceState:
    """Walk one trace under a partial assignment.

    Dependency sets are only materialized when ``track_deps`` is set;
    the fast path used for plain consistency checks skips the set
    algebra entirely and callers re-run with tracking to explain a
    conflict.
    """
    state = _TraceState()
    regs = {
        reg: ("init", (trace.trace_id, reg), 0, _NO_DEPS) for reg in sketch.registers
    }

    def constrain_eq(value, observed) -> bool:
        tag = value[0]
        if tag == _TOP:
            state.blockers.update(value[1])
            return True
        if tag == "const":
            if value[1] == observed:
                return True
            state.conflict_deps = value[2]
            return False
        _, var, off, deps = value
        want = observed - off
        if var in state.bindings:
            bound, bound_deps = state.bindings[var]
            if bound == want:
                return True
            state.conflict_deps = deps | bound_deps
            return False
        for bad, bad_deps in state.exclusions.get(var, ()):
            if bad == want:
                state.conflict_deps = deps | bad_deps
                return False
        state.bindings[var] = (want, deps)
        return True

    def constrain_neq(value, forbidden) -> bool:
        tag = value[0]
        if tag == _TOP:
            state.blockers.update(value[1])
            return True
        if tag == "const":
            if value[1] != forbidden:
                return True
            state.conflict_deps = value[2]
            return False
        _, var, off, deps = value
        bad = forbidden - off
        if var in state.bindings:
            bound, bound_deps = state.bindings[var]
            if bound != bad:
                return True
            state.conflict_deps = deps | bound_deps
            return False
        state.exclusions.setdefault(var, []).append((bad, deps))
        return True

    for step_no, step in enumerate(trace.steps):
        new_regs = {}
        for reg, unk in zip(sketch.registers, sketch.update_unknowns[step.key]):
            choice = assignment.get(unk.index)
            if choice is None:
                new_regs[reg] = (_TOP, frozenset((unk.index,)))
            else:
                term = unk.terms[choice]
                dep = frozenset((unk.index,)) if track_deps else _NO_DEPS
                if term.from_input:
                    new_regs[reg] = ("const", step.params[term.source] + term.offset, dep)
                else:
                    new_regs[reg] = _value_add(regs[term.source], term.offset, dep)
        regs = new_regs
        outs = sketch.output_unknowns[step.key]
        for param_idx, observed in step.out_obs:
            unk = outs[param_idx]
            choice = assignment.get(unk.index)
            if choice is None:
                state.blockers.add(unk.index)
                continue
            term = unk.terms[choice]
            dep = frozenset((unk.index,)) if track_deps else _NO_DEPS
            value = _value_add(regs[term.source], term.offset, dep)
            if not constrain_eq(value, observed):
                state.conflict = True
                return state
        if negative is not None and negative.step == step_no:
            unk = outs[negative.param_index]
            choice = assignment.get(unk.index)
            if choice is None:
                state.blockers.add(unk.index)
            else:
                term = unk.terms[choice]
                dep = frozenset((unk.index,)) if track_deps else _NO_DEPS
                value = _value_add(regs[term.source], term.offset, dep)
                if not constrain_neq(value, negative.wrong_value):
                    state.conflict = True
                    return state
    return state


@dataclass(frozen=True)
class TermAssignment:
    """One grammar index per unknown, in declaration order."""

    choices: tuple

    def term_for(self, unknown: Unknown) -> Term:
        return unknown.terms[self.choices[unknown.index]]

    def describe(self, sketch: Sketch) -> str:
        parts = []
        for unk in sketch.unknowns:
            parts.append(f"{unk.name()} = {self.term_for(unk).display()}")
        return "\n".join(parts)


def _check_tasks(system: TraceConstraintSystem):
    for trace in system.traces:
        yield trace, None
    for neg in system.negatives:
        yield neg.trace, neg


def _satisfiable(system: TraceConstraintSystem, assignment: dict,
                 keep_witness: bool = False) -> bool:
    """Exact satisfiability of the system under a partial assignment.

    Traces are independent given the choice variables (initial-register
    unknowns are per trace), so each trace propagates on its own.  The
    search branches only on variables that actually block an equation,
    re-propagates only the traces that variable can touch, and backjumps
    over variables that played no part in a conflict (the dependency
    sets collected during propagation say which ones did).

    With ``keep_witness`` the branched choices stay in ``assignment`` on
    success, turning it into a satisfying witness (unmentioned unknowns
    are free, any value works for them).
    """
    sketch = system.sketch
    tasks = system.tasks()
    status: list[frozenset] = []
    for trace, neg, _ in tasks:
        result = _propagate(sketch, trace, assignment, neg)
        if result.conflict:
            return False
        status.append(frozenset(result.blockers))
    budget = [SOLVER_NODE_BUDGET]
    nogood_seen: set = set()
    nogoods_by_var: dict = {}

    def conflict_deps_of(i: int) -> frozenset:
        trace, neg, _ = tasks[i]
        rerun = _propagate(sketch, trace, assignment, neg, track_deps=True)
        return rerun.conflict_deps

    def record_nogood(deps: frozenset) -> None:
        items = frozenset((v, assignment[v]) for v in deps if v in assignment)
        if not items or items in nogood_seen:
            return
        nogood_seen.add(items)
        for v, _ in items:
            nogoods_by_var.setdefault(v, []).append(items)

    def hits_nogood(var: int):
        for ng in nogoods_by_var.get(var, ()):
            for v, val in ng:
                if assignment.get(v) != val:
                    break
            else:
                return frozenset(v for v, _ in ng)
        return None

    def search():
        """True on success, else the conflict set (choice variables whose
        current values jointly caused the failure)."""
        budget[0] -= 1
        if budget[0] < 0:
            raise ConfigError(
                "solver node budget exhausted; the trace set is too entangled"
            )
        branch_on = None
        for b in status:
            if b:
                branch_on = min(b)
                break
        if branch_on is None:
            return True
        affected = [i for i, (_, _, inc) in enumerate(tasks) if branch_on in inc]
        saved = [status[i] for i in affected]
        node_conflicts: set[int] = set()
        for choice in sketch.unknowns[branch_on].probe_order():
            assignment[branch_on] = choice
            conflict = hits_nogood(branch_on)
            if conflict is None:
                for i in affected:
                    trace, neg, _ = tasks[i]
                    result = _propagate(sketch, trace, assignment, neg)
                    if result.conflict:
                        conflict = conflict_deps_of(i)
                        record_nogood(conflict)
                        break
                    status[i] = frozenset(result.blockers)
            if conflict is None:
                deeper = search()
                if deeper is True:
                    if not keep_witness:
                        del assignment[branch_on]
                    return True
                conflict = deeper
            for i, old in zip(affected, saved):
                status[i] = old
            if branch_on not in conflict:
                # Our value never mattered for this failure: trying the
                # remaining values is futile, hand the conflict upward.
                del assignment[branch_on]
                return frozenset(conflict)
            node_conflicts.update(conflict - {branch_on})
        del assignment[branch_on]
        result = frozenset(node_conflicts)
        record_nogood(result)
        return result

    result = search()
    if result is True:
        return True
    return False


def _minimal_conflict(system: TraceConstraintSystem) -> list[SolverTrace]:
    """Greedy shrink of the positive trace set that stays unsatisfiable."""
    if len(system.traces) > 50:
        return list(system.traces)
    core = list(system.traces)
    i = 0
    while i < len(core):
        trial = TraceConstraintSystem(system.sketch, core[:i] + core[i + 1:], system.negatives)
        if not _satisfiable(trial, {}):
            core.pop(i)
        else:
            i += 1
    return core


def _lex_min(system: TraceConstraintSystem) -> TermAssignment | None:
    """Lexicographically least consistent assignment, or None when unsat.

    Starts from any witness, then walks the constrained unknowns in
    declaration order trying to lower each below its witness value; a
    witness value of 0 is already minimal and needs no probing.
    """
    sketch = system.sketch
    witness: dict = {}
    if not _satisfiable(system, witness, keep_witness=True):
        return None
    fixed: dict = {}
    for index in system.constrained_unknowns():
        current = witness.get(index, 0)
        chosen = current
        for value in range(current):
            probe = dict(fixed)
            probe[index] = value
            if _satisfiable(system, probe, keep_witness=True):
                witness = probe
                chosen = value
                break
        fixed[index] = chosen
    choices = [0] * sketch.n_unknowns()
    for index, choice in fixed.items():
        choices[index] = choice
    return TermAssignment(tuple(choices))


def _first_failure(sketch: Sketch, remaining: list, full: dict) -> int | None:
    for pos, trace in enumerate(remaining):
        if _propagate(sketch, trace, full).conflict:
            return pos
    return None


def solve(system: TraceConstraintSystem) -> TermAssignment:
    """The lexicographically least choice vector consistent with every
    trace and negative example.

    Works on a growing core seeded with in-session repeat traces (the
    ones that pin arithmetic).  First the core grows under cheap witness
    assignments until one explains every remaining trace; only then is
    the witness lex-minimized, re-verifying after each minimization in
    case the smaller assignment breaks a trace outside the core.  The
    core's solution space always contains the full system's, so a
    core-minimal assignment that verifies everywhere is the full
    system's minimum.  Raises SynthesisUnsat (with a minimal conflicting
    trace subset when feasible) if no assignment explains every trace.
    """
    sketch = system.sketch
    core: list = []
    remaining: list = []
    for trace in system.traces:
        keys = [s.key for s in trace.steps]
        if len(keys) > len(set(keys)) and len(core) < SOLVER_SEED_CAP:
            core.append(trace)
        else:
            remaining.append(trace)

    def unsat(sub):
        unsat_core = _minimal_conflict(sub)
        return SynthesisUnsat(
            f"term grammar cannot explain the traces ({len(unsat_core)} conflicting)",
            conflicting_traces=unsat_core,
        )

    while True:
        sub = TraceConstraintSystem(sketch, core, system.negatives)
        witness: dict = {}
        if not _satisfiable(sub, witness, keep_witness=True):
            raise unsat(sub)
        full = {i: witness.get(i, 0) for i in range(sketch.n_unknowns())}
        failed = _first_failure(sketch, remaining, full)
        if failed is None:
            break
        core.append(remaining.pop(failed))

    while True:
        sub = TraceConstraintSystem(sketch, core, system.negatives)
        assignment = _lex_min(sub)
        if assignment is None:
            raise unsat(sub)
        full = {i: c for i, c in enumerate(assignment.choices)}
        failed = _first_failure(sketch, remaining, full)
        if failed is None:
            return assignment
        core.append(remaining.pop(failed))


def check_assignment(system: TraceConstraintSystem, assignment: TermAssignment) -> bool:
    """True when a full assignment is consistent with every trace."""
    full = {i: c for i, c in enumerate(assignment.choices)}
    for trace, neg in _check_tasks(system):
        result = _propagate(system.sketch, trace, full, neg)
        if result.conflict:
            return False
        if result.blockers:
            raise ConfigError("check_assignment needs a full assignment")
    return True


# --- machine instantiation ------------------------------------------------------


def instantiate(sketch: Sketch, assignment: TermAssignment,
                initial_policy: str = "zero") -> ExtendedMealyMachine:
    updates = {}
    output_terms = {}
    for key in sketch.update_unknowns:
        updates[key] = tuple(assignment.term_for(u) for u in sketch.update_unknowns[key])
        outs = sketch.output_unknowns[key]
        if outs:
            output_terms[key] = tuple(assignment.term_for(u) for u in outs)
    input_params = {}
    for sym in sketch.skeleton.inputs:
        labels = sketch.param_decl.input_labels(sym.kind)
        if labels:
            input_params[sym] = labels
    output_params = {}
    for sym in sketch.skeleton.outputs:
        labels = sketch.param_decl.output_labels(sym.kind)
        if labels and not sym.is_nil():
            output_params[sym] = labels
    return ExtendedMealyMachine(
        sketch.skeleton, sketch.registers, input_params, output_params,
        updates, output_terms, initial_policy,
    )


# --- CEGIS loop -------------------------------------------------------------------


@dataclass
class SynthesisConfig:
    registers: tuple = ("r", "pr", "pi")
    param_decl: ParamDecl | None = None
    param_increment: bool = False
    max_iterations: int = 25
    validation_traces: int = 5000
    validation_max_len: int = 12
    max_table_traces: int = 300
    seed: int = 0


@dataclass
class SynthesisReport:
    iterations: int = 0
    traces_used: int = 0
    negatives: int = 0
    validated: bool = False
    grammar_insufficient: bool = False
    term_summary: str = ""

    def to_text(self) -> str:
        lines = [
            "synthesis-report v1",
            f"iterations {self.iterations}",
            f"traces_used {self.traces_used}",
            f"negatives {self.negatives}",
            f"validated {'yes' if self.validated else 'no'}",
            f"grammar_insufficient {'yes' if self.grammar_insufficient else 'no'}",
            "terms",
            self.term_summary,
        ]
        return "\n".join(lines) + "\n"


def _select_entries(machine: MealyMachine, entries, cap: int) -> list:
    """Pick a constraining subset of the cached traces.

    Transition coverage pins which updates matter at all; traces that
    revisit a transition within one session are what separates genuine
    arithmetic from per-session constants, so both kinds are kept.
    """
    seen = set()
    covered: set = set()
    coverage_picks = []
    repeat_picks = []
    for entry in entries:
        sig = (
            tuple(s.display() for s in entry.abstract.inputs),
            tuple(p.seqNumber for p in entry.concrete.inputs),
            tuple(p.seqNumber for p in entry.concrete.outputs),
        )
        if sig in seen:
            continue
        seen.add(sig)
        state = machine.initial
        keys = []
        for sym in entry.abstract.inputs:
            key = (state, sym.erased())
            keys.append(key)
            state = machine.transition[key]
        fresh = set(keys) - covered
        if fresh:
            covered.update(fresh)
            coverage_picks.append(entry)
        elif len(set(keys)) < len(keys):
            repeat_picks.append(entry)
    # Repeat evidence saturates quickly; a few dozen such traces pin the
    # arithmetic and the CEGIS validation loop supplies anything missed.
    repeat_cap = min(cap // 2, 50)
    picked = coverage_picks[:cap]
    for entry in repeat_picks[:repeat_cap]:
        if len(picked) >= cap:
            break
        picked.append(entry)
    return picked


def _first_mismatch(sketch: Sketch, assignment: TermAssignment, trace: SolverTrace):
    """Replay a trace under a candidate; None, or the failing output slot
    (step, param_index, produced value, observed value)."""
    full = {i: c for i, c in enumerate(assignment.choices)}
    bindings: dict = {}
    regs = {reg: ("init", (trace.trace_id, reg), 0, _NO_DEPS) for reg in sketch.registers}
    for step_no, step in enumerate(trace.steps):
        new_regs = {}
        for reg, unk in zip(sketch.registers, sketch.update_unknowns[step.key]):
            term = unk.terms[full[unk.index]]
            if term.from_input:
                new_regs[reg] = ("const", step.params[term.source] + term.offset, _NO_DEPS)
            else:
                new_regs[reg] = _value_add(regs[term.source], term.offset, _NO_DEPS)
        regs = new_regs
        outs = sketch.output_unknowns[step.key]
        for param_idx, observed in step.out_obs:
            term = outs[param_idx].terms[full[outs[param_idx].index]]
            value = _value_add(regs[term.source], term.offset, _NO_DEPS)
            if value[0] == "init":
                _, var, off, _deps = value
                if var not in bindings:
                    bindings[var] = observed - off
                    continue
                value = ("const", bindings[var] + off, _NO_DEPS)
            if value[1] != observed:
                return (step_no, param_idx, value[1], observed)
    return None


def synthesize(machine: MealyMachine, oracle_table, adapter_handle,
               config: SynthesisConfig | None = None):
    """CEGIS: solve on cached traces, validate on fresh SUL traces, and
    refine with failures until the candidate survives validation.

    Returns (ExtendedMealyMachine, SynthesisReport).  An exhausted
    iteration budget returns the last candidate flagged unvalidated; an
    unsatisfiable system raises SynthesisUnsat (grammar insufficiency).
    """
    config = config or SynthesisConfig()
    entries = _select_entries(machine, list(oracle_table), config.max_table_traces)
    if not entries:
        raise ConfigError("oracle table is empty; run a learn pass first")
    param_decl = config.param_decl or ParamDecl.tcp_default(adapter_handle.alphabet)
    sketch = build_sketch(machine, config.registers, param_decl, config.param_increment)

    solver_traces = [_normalize_trace(sketch, e, i) for i, e in enumerate(entries)]
    negatives: list[NegativeExample] = []
    rng = random.Random(config.seed)
    report = SynthesisReport()
    candidate = None
    assignment = None
    validated = False

    per_round = max(1, config.validation_traces)
    for iteration in range(1, config.max_iterations + 1):
        report.iterations = iteration
        system = TraceConstraintSystem(sketch, solver_traces, negatives)
        try:
            assignment = solve(system)
        except SynthesisUnsat as exc:
            report.grammar_insufficient = True
            report.traces_used = len(solver_traces)
            raise SynthesisUnsat(
                f"grammar insufficiency after {iteration} iteration(s): {exc}",
                conflicting_traces=exc.conflicting_traces,
            ) from exc
        candidate = instantiate(sketch, assignment)
        failure = None
        for _ in range(per_round):
            length = rng.randint(1, config.validation_max_len)
            word = tuple(rng.choice(machine.inputs) for _ in range(length))
            adapter_handle.query(word)
            record = adapter_handle.last_record
            fresh = _normalize_trace(sketch, record, len(solver_traces))
            mismatch = _first_mismatch(sketch, assignment, fresh)
            if mismatch is not None:
                step_no, param_idx, produced, observed = mismatch
                solver_traces.append(fresh)
                negatives.append(NegativeExample(fresh, step_no, param_idx, produced))
                failure = mismatch
                break
        if failure is None:
            validated = True
            break

    report.traces_used = len(solver_traces)
    report.negatives = len(negatives)
    report.validated = validated
    report.term_summary = assignment.describe(sketch)
    return candidate, report
