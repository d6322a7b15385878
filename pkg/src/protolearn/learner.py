"""Active learning of Mealy machines over the adapter's query interface.

The learner follows the minimally-adequate-teacher contract: membership
queries answered by the adapter (through voting), plus a heuristic
equivalence oracle.  The default algorithm is an observation table with
suffix-based counterexample processing; counterexamples returned by any
oracle are sound, their absence proves nothing.
"""

from __future__ import annotations

import itertools
import random
import time
from dataclasses import dataclass, field

from .adapter import NondeterminismReport
from .errors import ConfigError, NonDistinguishingError, NondeterminismHalt
from .mealy import MealyMachine, run
from .symbols import Trace

EXHAUSTIVE_CAP = 200_000


@dataclass
class EquivOracleConfig:
    strategy: str = "random_words"
    num_tests: int = 2000
    max_len: int = 12
    seed: int = 0

    def validate(self) -> None:
        if self.strategy not in ("random_words", "bounded_w_method", "exhaustive_up_to"):
            raise ConfigError(f"unknown equivalence strategy {self.strategy!r}")
        if self.max_len < 1:
            raise ConfigError("equivalence max_len must be >= 1")
        if self.num_tests < 0:
            raise ConfigError("equivalence num_tests must be >= 0")


@dataclass
class LearnStats:
    membership_queries: int = 0
    cache_hits: int = 0
    equivalence_queries: int = 0
    equivalence_tests: int = 0
    rounds: int = 0
    states: int = 0
    transitions: int = 0
    wall_time_s: float = 0.0
    halted: bool = False

    def equivalence_vacuous(self) -> bool:
        return self.equivalence_tests == 0

    def to_text(self) -> str:
        lines = [
            "learn-stats v1",
            f"membership_queries {self.membership_queries}",
            f"cache_hits {self.cache_hits}",
            f"equivalence_queries {self.equivalence_queries}",
            f"equivalence_tests {self.equivalence_tests}",
            f"rounds {self.rounds}",
            f"states {self.states}",
            f"transitions {self.transitions}",
            f"vacuous_equivalence {'yes' if self.equivalence_vacuous() else 'no'}",
            f"wall_time_s {self.wall_time_s:.3f}",
        ]
        return "\n".join(lines) + "\n"


class ObservationTable:
    """Prefix rows, suffix columns, and the outputs that fill them."""

    def __init__(self, alphabet_symbols):
        self.alphabet = tuple(alphabet_symbols)
        self.prefixes: list[tuple] = [()]
        self.suffixes: list[tuple] = [(a,) for a in self.alphabet]
        self.cells: dict = {}

    def row(self, prefix: tuple) -> tuple:
        return tuple(self.cells[(prefix, e)] for e in self.suffixes)

    def extensions(self):
        for u in self.prefixes:
            for a in self.alphabet:
                yield u + (a,)


class Learner:
    """Observation-table learner bound to one adapter."""

    def __init__(self, adapter, alphabet, vote_policy=None):
        self.adapter = adapter
        self.alphabet_config = alphabet
        self.symbols = alphabet.input_symbols()
        self.vote_policy = vote_policy
        self.table = ObservationTable(self.symbols)
        self.stats = LearnStats()
        self._cache: dict[tuple, tuple] = {}

    # -- membership -------------------------------------------------------

    def membership(self, word) -> tuple:
        """SUL outputs for a word, cached whole-word.

        Prefixes of answered words are filled into the cache as well:
        against a deterministic SUL the outputs of a prefix are exactly
        the prefix of the outputs, so no session splicing can occur.
        """
        word = tuple(word)
        if word in self._cache:
            self.stats.cache_hits += 1
            return self._cache[word]
        answer = self.adapter.voted_query(word, self.vote_policy)
        if isinstance(answer, NondeterminismReport):
            self.stats.halted = True
            raise NondeterminismHalt(answer)
        outputs = tuple(answer)
        self.stats.membership_queries += 1
        for i in range(1, len(word) + 1):
            self._cache.setdefault(word[:i], outputs[:i])
        self._cache[()] = ()
        return outputs

    # -- table maintenance -------------------------------------------------

    def _fill(self) -> None:
        table = self.table
        for u in itertools.chain(table.prefixes, table.extensions()):
            for e in table.suffixes:
                if (u, e) not in table.cells:
                    outputs = self.membership(u + e)
                    table.cells[(u, e)] = outputs[len(u):]

    def _close(self) -> None:
        while True:
            self._fill()
            table = self.table
            known = {table.row(u) for u in table.prefixes}
            unclosed = None
            for ext in table.extensions():
                if table.row(ext) not in known:
                    unclosed = ext
                    break
            if unclosed is None:
                return
            table.prefixes.append(unclosed)

    def hypothesis(self) -> MealyMachine:
        self._close()
        table = self.table
        reps: dict[tuple, int] = {}
        access: list[tuple] = []
        for u in table.prefixes:
            r = table.row(u)
            if r not in reps:
                reps[r] = len(access)
                access.append(u)
        transition = {}
        output = {}
        for r, state in reps.items():
            u = access[state]
            for a in self.alphabet_config.input_symbols():
                transition[(state, a)] = reps[table.row(u + (a,))]
                output[(state, a)] = table.cells[(u, (a,))][0]
        return MealyMachine.build(
            reps[table.row(())],
            self.symbols,
            self.alphabet_config.output_symbols(),
            transition,
            output,
        )

    def access_word(self, machine: MealyMachine, state) -> tuple:
        """Shortest input word reaching a hypothesis state."""
        frontier = [(machine.initial, ())]
        seen = {machine.initial}
        while frontier:
            nxt = []
            for s, word in frontier:
                if s == state:
                    return word
                for a in machine.inputs:
                    t = machine.transition[(s, a)]
                    if t not in seen:
                        seen.add(t)
                        nxt.append((t, word + (a,)))
            frontier = nxt
        raise ConfigError("state unreachable in hypothesis")

    # -- refinement ---------------------------------------------------------

    def refine(self, counterexample: Trace) -> None:
        """Fold a counterexample into the table (suffix analysis).

        Rejects traces the current hypothesis already explains.
        """
        hyp = self.hypothesis()
        inputs = tuple(counterexample.inputs)
        sul_out = self.membership(inputs)
        if tuple(run(hyp, inputs)) == sul_out:
            raise NonDistinguishingError("counterexample does not distinguish the hypothesis")
        while True:
            hyp_out = tuple(run(hyp, inputs))
            if hyp_out == sul_out:
                return
            # Trim to the first divergence: outputs of a prefix are a
            # prefix of the outputs, so this is the shortest failing
            # prefix of the word.
            k = next(i for i, (x, y) in enumerate(zip(hyp_out, sul_out)) if x != y)
            word = inputs[: k + 1]
            self._rs_split(hyp, word)
            hyp = self.hypothesis()

    def _rs_split(self, hyp: MealyMachine, word: tuple) -> None:
        """Find the suffix exposing a missing state and add it (the
        Rivest-Schapire decomposition, adapted to Mealy outputs)."""
        n = len(word)

        def final_output(i: int) -> object:
            state, _ = hyp.walk(word[:i])
            u = self.access_word(hyp, state)
            return self.membership(u + word[i:])[-1]

        # f(0) is the SUL's answer, f(n-1) the hypothesis's; they differ,
        # so a boundary where f flips exists and binary search finds it.
        lo, hi = 0, n - 1
        f_lo = final_output(lo)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if final_output(mid) != f_lo:
                hi = mid
            else:
                lo = mid
        split = lo
        suffix = word[split + 1:]
        if not suffix:
            raise NonDistinguishingError("counterexample analysis produced no suffix")
        if suffix not in self.table.suffixes:
            self.table.suffixes.append(suffix)
        else:
            # Already-present suffix cannot refine further; fall back to
            # adding all suffixes of the word (keeps progress guaranteed).
            for i in range(1, len(word)):
                s = word[i:]
                if s not in self.table.suffixes:
                    self.table.suffixes.append(s)
                    break
            else:
                raise NonDistinguishingError("counterexample adds no new suffix")


def _mq_source(handle):
    """Accept either a Learner or a bare Adapter as the query source."""
    if isinstance(handle, Learner):
        return handle.membership

    def ask(word):
        answer = handle.voted_query(word)
        if isinstance(answer, NondeterminismReport):
            raise NondeterminismHalt(answer)
        return tuple(answer)

    return ask


def _distinguishing_suffix(machine: MealyMachine, s1, s2) -> tuple | None:
    from collections import deque

    seen = {(s1, s2)}
    queue = deque([((s1, s2), ())])
    while queue:
        (a, b), word = queue.popleft()
        for sym in machine.inputs:
            ta, oa = machine.step(a, sym)
            tb, ob = machine.step(b, sym)
            if oa != ob:
                return word + (sym,)
            if (ta, tb) not in seen:
                seen.add((ta, tb))
                queue.append(((ta, tb), word + (sym,)))
    return None


def _characterizing_set(machine: MealyMachine) -> list[tuple]:
    suffixes: list[tuple] = []
    for s1, s2 in itertools.combinations(machine.states, 2):
        if any(_suffix_distinguishes(machine, s1, s2, w) for w in suffixes):
            continue
        w = _distinguishing_suffix(machine, s1, s2)
        if w is not None:
            suffixes.append(w)
    return suffixes or [(machine.inputs[0],)]


def _suffix_distinguishes(machine: MealyMachine, s1, s2, word) -> bool:
    a, b = s1, s2
    for sym in word:
        a, oa = machine.step(a, sym)
        b, ob = machine.step(b, sym)
        if oa != ob:
            return True
    return False


def _test_words(hypothesis: MealyMachine, config: EquivOracleConfig):
    symbols = hypothesis.inputs
    if config.strategy == "random_words":
        rng = random.Random(config.seed)
        for _ in range(config.num_tests):
            length = rng.randint(1, config.max_len)
            yield tuple(rng.choice(symbols) for _ in range(length))
    elif config.strategy == "exhaustive_up_to":
        total = sum(len(symbols) ** i for i in range(1, config.max_len + 1))
        if total > EXHAUSTIVE_CAP:
            raise ConfigError(
                f"exhaustive_up_to({config.max_len}) would test {total} words; "
                f"only desk scale (<= {EXHAUSTIVE_CAP}) is permitted"
            )
        for length in range(1, config.max_len + 1):
            yield from itertools.product(symbols, repeat=length)
    elif config.strategy == "bounded_w_method":
        # Transition cover x bounded middle sections x characterizing set,
        # truncated at num_tests. max_len bounds the middle depth.
        states = hypothesis.states
        access = {}
        from collections import deque

        queue = deque([(hypothesis.initial, ())])
        access[hypothesis.initial] = ()
        while queue:
            s, word = queue.popleft()
            for a in symbols:
                t = hypothesis.transition[(s, a)]
                if t not in access:
                    access[t] = word + (a,)
                    queue.append((t, word + (a,)))
        cover = [access[s] + (a,) for s in states for a in symbols]
        wset = _characterizing_set(hypothesis)
        depth = max(0, config.max_len)
        cap = config.num_tests or EXHAUSTIVE_CAP
        produced = 0
        for middle_len in range(depth + 1):
            for p in cover:
                for middle in itertools.product(symbols, repeat=middle_len):
                    for w in wset:
                        yield p + middle + w
                        produced += 1
                        if produced >= cap:
                            return


def find_counterexample(hypothesis: MealyMachine, handle, config: EquivOracleConfig):
    """Heuristic equivalence oracle: None or a distinguishing trace.

    A returned trace carries the SUL's outputs and genuinely disagrees
    with the hypothesis; None is not an equivalence proof.
    """
    config.validate()
    ask = _mq_source(handle)
    tested = 0
    for word in _test_words(hypothesis, config):
        tested += 1
        sul_out = ask(word)
        if tuple(run(hypothesis, word)) != tuple(sul_out):
            if isinstance(handle, Learner):
                handle.stats.equivalence_tests += tested
            return Trace(tuple(word), tuple(sul_out))
    if isinstance(handle, Learner):
        handle.stats.equivalence_tests += tested
    return None


def learn(adapter, alphabet, equiv_config: EquivOracleConfig | None = None,
          vote_policy=None):
    """Drive the full learning loop; returns (machine, stats).

    Nondeterministic answers halt learning by raising NondeterminismHalt
    so the caller can surface the report.
    """
    config = equiv_config or EquivOracleConfig()
    config.validate()
    if not alphabet.inputs:
        raise ConfigError("cannot learn over an empty alphabet")
    started = time.monotonic()
    learner = Learner(adapter, alphabet, vote_policy)
    try:
        hypothesis = learner.hypothesis()
        while True:
            learner.stats.equivalence_queries += 1
            ce = find_counterexample(hypothesis, learner, config)
            if ce is None:
                break
            learner.refine(ce)
            hypothesis = learner.hypothesis()
            learner.stats.rounds += 1
    finally:
        learner.stats.wall_time_s = time.monotonic() - started
    learner.stats.rounds += 1
    learner.stats.states = hypothesis.n_states()
    learner.stats.transitions = hypothesis.n_transitions()
    return hypothesis, learner.stats
