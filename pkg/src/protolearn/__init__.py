"""Closed-box protocol analysis: learn, synthesize, compare, check."""

from .adapter import Adapter, NondeterminismReport, OracleTable, VotePolicy, abstract, concretize
from .analysis import (
    DiffReport,
    MonitorAutomaton,
    QuantitativeProperty,
    SafetyProperty,
    check_quantitative,
    check_safety,
    diff,
    report_nondeterminism,
)
from .learner import EquivOracleConfig, LearnStats, Learner, find_counterexample, learn
from .mealy import (
    EquivalenceVerdict,
    ExtendedMealyMachine,
    MealyMachine,
    Term,
    count_traces,
    deserialize,
    equivalent,
    run,
    run_extended,
    serialize,
    to_dot,
)
from .refsim import BugInjection, SimCore, SimSpec, fixture, ground_truth, serve
from .symbols import (
    NIL,
    AbstractSymbol,
    AlphabetConfig,
    ConcretePacket,
    ConcreteTrace,
    SymbolDecl,
    Trace,
    tcp_alphabet,
)
from .synthesis import (
    ParamDecl,
    ParamSpec,
    Sketch,
    SynthesisConfig,
    TermAssignment,
    TraceConstraintSystem,
    build_sketch,
    generate_constraints,
    solve,
    synthesize,
)

__version__ = "0.1.0"
