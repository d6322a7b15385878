"""Command-line entry point tying the pipeline together.

Subcommands: simulate, learn, synth, diff, check, viz.  Every flag can
also be supplied through an environment variable with the PROTOLEARN_
prefix (``--vote-min`` becomes ``PROTOLEARN_VOTE_MIN``); explicit flags
win.  Exit codes: 0 ok, 2 config error, 3 transport error, 4
nondeterminism detected, 5 property violation found.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import analysis, mealy, refsim, synthesis, wire
from .adapter import Adapter, OracleTable, VotePolicy
from .errors import ConfigError, NondeterminismHalt, ProtolearnError, TransportError
from .learner import EquivOracleConfig, learn
from .symbols import load_alphabet

ENV_PREFIX = "PROTOLEARN_"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRANSPORT = 3
EXIT_NONDETERMINISM = 4
EXIT_VIOLATION = 5


def _env_name(flag: str) -> str:
    return ENV_PREFIX + flag.lstrip("-").replace("-", "_").upper()


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose defaults can come from the environment."""

    def add_opt(self, flag: str, **kwargs):
        env = os.environ.get(_env_name(flag))
        if env is not None:
            caster = kwargs.get("type", str)
            try:
                kwargs["default"] = caster(env)
            except ValueError:
                raise ConfigError(f"bad value {env!r} for {_env_name(flag)}")
            kwargs.pop("required", None)
        return self.add_argument(flag, **kwargs)

    def error(self, message):
        raise ConfigError(message)


def _vote_policy(args) -> VotePolicy:
    return VotePolicy(args.vote_min, args.vote_threshold, args.vote_max)


def _equiv_config(args) -> EquivOracleConfig:
    return EquivOracleConfig(
        strategy=args.equiv_strategy,
        num_tests=args.equiv_tests,
        max_len=args.equiv_maxlen,
        seed=args.seed,
    )


def _add_vote_flags(p: _Parser) -> None:
    p.add_opt("--vote-min", type=int, default=3, help="minimum query repeats")
    p.add_opt("--vote-threshold", type=float, default=0.8, help="majority agreement threshold")
    p.add_opt("--vote-max", type=int, default=20, help="maximum query repeats")


def _add_equiv_flags(p: _Parser) -> None:
    p.add_opt("--equiv-strategy", default="random_words",
              choices=["random_words", "bounded_w_method", "exhaustive_up_to"])
    p.add_opt("--equiv-tests", type=int, default=2000)
    p.add_opt("--equiv-maxlen", type=int, default=12)


def cmd_simulate(args) -> int:
    bug = refsim.BugInjection.parse(args.bug) if args.bug else None
    spec = refsim.fixture(args.fixture, bug)
    handle = refsim.serve(spec, args.listen, args.seed)
    print(f"simulating {args.fixture} on {handle.endpoint}", flush=True)
    try:
        while True:
            handle._thread.join(timeout=1.0)
            if not handle._thread.is_alive():
                break
    except KeyboardInterrupt:
        pass
    finally:
        handle.close()
    return EXIT_OK


def cmd_learn(args) -> int:
    alphabet = load_alphabet(args.alphabet)
    transport = wire.connect(args.sul, timeout=args.timeout)
    adapter = Adapter(transport, alphabet, seed=args.seed, vote_policy=_vote_policy(args))
    try:
        machine, stats = learn(adapter, alphabet, _equiv_config(args))
    except NondeterminismHalt as exc:
        report_path = args.out + ".nondet.txt"
        lines = [f"word {exc.report.word_text()}"]
        for answer, n in exc.report.answers.items():
            text = " ".join(s.display() for s in answer)
            lines.append(f"seen {n}/{exc.report.total} {text}")
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"ERROR NONDETERMINISM: learning halted; report at {report_path}", file=sys.stderr)
        return EXIT_NONDETERMINISM
    finally:
        adapter.close()
    mealy.save(machine, args.out)
    adapter.oracle_table_snapshot().save(args.oracle_table)
    if args.stats:
        with open(args.stats, "w", encoding="utf-8") as fh:
            fh.write(stats.to_text())
    print(f"learned {machine.n_states()} states / {machine.n_transitions()} transitions "
          f"in {stats.membership_queries} membership queries")
    print(f"model written to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    machine = mealy.load(args.model)
    if isinstance(machine, mealy.ExtendedMealyMachine):
        raise ConfigError("synth expects a plain model document")
    table = OracleTable.load(args.oracle_table)
    if len(table) == 0:
        raise ConfigError("oracle table is empty; run learn first")
    alphabet = load_alphabet(args.alphabet)
    transport = wire.connect(args.sul, timeout=args.timeout)
    adapter = Adapter(transport, alphabet, seed=args.seed)
    if args.params == "default":
        decl = synthesis.ParamDecl.tcp_default(alphabet)
    elif args.params == "offset":
        decl = synthesis.ParamDecl.tcp_offset(alphabet)
    else:
        raise ConfigError(f"unknown parameter declaration {args.params!r}")
    config = synthesis.SynthesisConfig(
        registers=tuple(args.registers.split(",")),
        param_decl=decl,
        max_iterations=args.synth_iterations,
        validation_traces=args.synth_validation,
        seed=args.seed,
    )
    try:
        extended, report = synthesis.synthesize(machine, table, adapter, config)
    finally:
        adapter.close()
    mealy.save(extended, args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report.to_text())
    print(f"synthesized extended model ({'validated' if report.validated else 'UNVALIDATED'}, "
          f"{report.iterations} iterations, {report.traces_used} traces)")
    print(f"extended model written to {args.out}")
    return EXIT_OK


def cmd_diff(args) -> int:
    a = mealy.load(args.model_a)
    b = mealy.load(args.model_b)
    report = analysis.diff(a, b, max_examples=args.max_examples)
    text = report.to_text()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    return EXIT_OK


def cmd_check(args) -> int:
    machine = mealy.load(args.model)
    if isinstance(machine, mealy.ExtendedMealyMachine):
        machine = machine.skeleton
    violations = []
    for path in args.properties:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                monitors = analysis.load_monitors(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read properties {path!r}: {exc}")
        for monitor in monitors:
            prop = analysis.SafetyProperty(monitor.name, monitor, monitor.description)
            result = analysis.check_safety(machine, prop)
            if result.passed:
                print(f"pass {monitor.name}")
            else:
                witness = " ".join(s.display() for s in result.violation.inputs)
                outs = " ".join(s.display() for s in result.violation.outputs)
                print(f"VIOLATION {monitor.name}: inputs {witness} outputs {outs}")
                violations.append(monitor.name)
    if violations:
        print(f"ERROR VIOLATION: {len(violations)} propert{'y' if len(violations) == 1 else 'ies'} violated",
              file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_viz(args) -> int:
    machine = mealy.load(args.model)
    text = mealy.to_dot(machine)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(f"DOT written to {args.out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="protolearn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="serve a simulated protocol implementation")
    p.add_opt("--fixture", required=True, help=f"one of {', '.join(refsim.FIXTURE_NAMES)}")
    p.add_opt("--listen", default="127.0.0.1:0")
    p.add_opt("--seed", type=int, default=0)
    p.add_opt("--bug", default="", help="bug injection, e.g. probabilistic_reset:0.82")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("learn", help="learn a model of a running SUL")
    p.add_opt("--sul", required=True, help="SUL endpoint host:port")
    p.add_opt("--alphabet", default="tcp")
    p.add_opt("--seed", type=int, default=0)
    p.add_opt("--out", required=True, help="model document output path")
    p.add_opt("--oracle-table", required=True, help="oracle table output path")
    p.add_opt("--stats", default="", help="stats report output path")
    p.add_opt("--timeout", type=float, default=wire.DEFAULT_TIMEOUT)
    _add_vote_flags(p)
    _add_equiv_flags(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("synth", help="synthesize register updates for a learned model")
    p.add_opt("--model", required=True)
    p.add_opt("--oracle-table", required=True)
    p.add_opt("--sul", required=True)
    p.add_opt("--alphabet", default="tcp")
    p.add_opt("--out", required=True)
    p.add_opt("--report", default="")
    p.add_opt("--registers", default="r,pr,pi")
    p.add_opt("--params", default="default", help="default | offset")
    p.add_opt("--seed", type=int, default=0)
    p.add_opt("--timeout", type=float, default=wire.DEFAULT_TIMEOUT)
    p.add_opt("--synth-validation", type=int, default=1000)
    p.add_opt("--synth-iterations", type=int, default=25)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("diff", help="compare two learned models")
    p.add_argument("model_a")
    p.add_argument("model_b")
    p.add_opt("--max-examples", type=int, default=3)
    p.add_opt("--out", default="")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("check", help="check safety monitors against a model")
    p.add_opt("--model", required=True)
    p.add_argument("--properties", nargs="+", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("viz", help="render a model document as DOT")
    p.add_opt("--model", required=True)
    p.add_opt("--out", required=True)
    p.set_defaults(func=cmd_viz)

    return parser


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except NondeterminismHalt as exc:
        print(f"ERROR NONDETERMINISM: {exc}", file=sys.stderr)
        return EXIT_NONDETERMINISM
    except TransportError as exc:
        print(f"ERROR TRANSPORT: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ConfigError as exc:
        print(f"ERROR CONFIG: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtolearnError as exc:
        print(f"ERROR {exc.token}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # keep the contract: nonzero + one parseable line
        print(f"ERROR INTERNAL: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
