"""Branch distances, approach levels, test-case evaluation and the archive."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .cdg import END, TAKEN, Branch, Cdg
from .chain import ExecutionTrace
from .testgen import FunctionCall, TestCase

K = 1
UNREACHED = math.inf
NO_PREDICATE_DISTANCE = 0.5

# relation after applying negations: (base, negated)
_NEGATE = {"LT": "GE", "GT": "LE", "EQ": "NE", "GE": "LT", "LE": "GT", "NE": "EQ"}
_BASE = {"LT": "LT", "SLT": "LT", "GT": "GT", "SGT": "GT", "EQ": "EQ", "ISZERO": "EQ"}


class TraceMismatch(Exception):
    """An executed offset lies outside every known block."""


class EvaluationError(Exception):
    """Internal inconsistency between a trace and the graph."""


def effective_relation(kind: str, negations: int, polarity: str) -> str:
    """Relation between a and b that holds when the branch of this polarity is taken."""
    rel = _BASE[kind]
    flips = negations + (0 if polarity == TAKEN else 1)
    return _NEGATE[rel] if flips % 2 else rel


def holds(relation: str, a: int, b: int) -> bool:
    return {"LT": a < b, "LE": a <= b, "GT": a > b, "GE": a >= b,
            "EQ": a == b, "NE": a != b}[relation]


def korel_f(kind: str, negations: int, polarity: str, a: int, b: int) -> int:
    """Objective value of the effective predicate; 0 exactly when it holds.

    For ISZERO, ``a`` is the tested operand and ``b`` is 0.  Unsatisfied
    strict relations get the offset K so the value is strictly positive.
    """
    rel = effective_relation(kind, negations, polarity)
    if holds(rel, a, b):
        return 0
    if rel == "GT":
        return b - a + K
    if rel == "GE":
        return b - a
    if rel == "LT":
        return a - b + K
    if rel == "LE":
        return a - b
    if rel == "EQ":
        return abs(a - b)
    return K  # NE with a == b


# Above this, neighbouring values of f/(f+1) collapse in a double.
EXACT_THRESHOLD = 1 << 26


def normalize(f):
    """f / (f + 1) in [0, 1).

    Small distances come back as floats.  Larger integer distances come back
    as exact fractions: a double would round them to 1.0 and erase both the
    ordering between them and the gap to unreached branches.
    """
    if f < 0:
        raise ValueError("distance must be non-negative")
    if f == 0:
        return 0.0
    if isinstance(f, int):
        if f < EXACT_THRESHOLD:
            return f / (f + 1)
        return Fraction(f, f + 1)
    return f / (f + 1.0)


# -- trace walking --------------------------------------------------------------

@dataclass(frozen=True)
class Visit:
    node: int
    first_step: int
    last_step: int


def node_visits(trace: ExecutionTrace, cdg: Cdg) -> list[Visit]:
    """Split a trace into consecutive node visits (live and trimmed nodes alike)."""
    index = cdg.block_index
    visits: list[Visit] = []
    cur: Optional[int] = None
    start = 0
    offsets = trace.executed_offsets
    known = cdg.known_offsets
    for step, off in enumerate(offsets):
        hit = index.get(off)
        if hit is None:
            if off not in known:
                raise TraceMismatch(f"offset {off:#x} lies in no block")
            continue
        node, pos = hit
        if pos == 0 or node != cur:
            if cur is not None:
                visits.append(Visit(cur, start, step - 1))
            cur, start = node, step
    if cur is not None:
        visits.append(Visit(cur, start, len(offsets) - 1))
    return visits


def find_next_node(current: int, trace: ExecutionTrace, cdg: Cdg, start_step: int = 0) -> int:
    """Node entered right after the first visit of ``current`` starting at or after ``start_step``."""
    visits = node_visits(trace, cdg)
    for i, v in enumerate(visits):
        if v.node == current and v.first_step >= start_step:
            return visits[i + 1].node if i + 1 < len(visits) else END
    raise TraceMismatch(f"node {current} not visited in trace")


def approach_level(branch: Branch, traversed: set, cdg: Cdg, entered: bool = True) -> int:
    """Unsatisfied control ancestors of ``branch``.

    When the branch's method was entered, the count of untraversed ancestors
    up to the nearest traversed one, at least 1.  For a method that was never
    entered, the whole chain plus one for the entry.
    """
    count = 0
    parent = branch.control_parent
    while parent is not None and parent not in traversed:
        count += 1
        parent = cdg.branches[parent].control_parent
    if not entered:
        return count + 1
    return max(1, count)


@dataclass
class Evaluation:
    vector: list
    traversed: frozenset
    entered_methods: frozenset = frozenset()
    statuses: tuple = ()

    @property
    def covered(self) -> frozenset:
        return self.traversed


def _branch_distance(br: Branch, visit: Visit, trace: ExecutionTrace, jumpi_step: Optional[int]) -> float:
    if jumpi_step is None:
        return 1.0
    if br.predicate is None:
        return NO_PREDICATE_DISTANCE
    obs = None
    for o in trace.predicate_observations:
        if o.step > jumpi_step:
            break
        if o.step >= visit.first_step and o.comparison_offset == br.predicate.comparison_offset:
            obs = o
    if obs is None:
        return 1.0
    f = korel_f(br.predicate.kind, br.predicate.negations, br.polarity, obs.a, obs.b)
    if f == 0:
        raise EvaluationError(
            f"branch {br.id} satisfied at step {obs.step} but its edge was not taken")
    return normalize(f)


def evaluate_test_case(testcase: TestCase, traces: Sequence[ExecutionTrace], cdg: Cdg) -> Evaluation:
    if len(traces) != len(testcase.statements):
        raise ValueError("one trace per statement is required")
    k = len(cdg.branches)
    scores = [UNREACHED] * k
    traversed: set = set()
    entered: set = set()
    for stmt, trace in zip(testcase.statements, traces):
        if not isinstance(stmt, FunctionCall) or not trace.executed_offsets:
            continue
        visits = node_visits(trace, cdg)
        offsets = trace.executed_offsets
        for i, v in enumerate(visits):
            if v.node in cdg.entries:
                entered.add(v.node)
            brs = cdg.branches_from.get(v.node)
            if not brs:
                continue
            nxt = visits[i + 1].node if i + 1 < len(visits) else END
            jumpi_off = brs[0].jumpi_offset
            jumpi_step = v.last_step if offsets[v.last_step] == jumpi_off else None
            for br in brs:
                if jumpi_step is not None and nxt == br.target:
                    traversed.add(br.id)
                    scores[br.id] = 0.0
                    continue
                d = _branch_distance(br, v, trace, jumpi_step)
                if d < scores[br.id]:
                    scores[br.id] = d
    entered_methods = frozenset(entered)
    for br in cdg.branches:
        if scores[br.id] == UNREACHED:
            in_method = cdg.entry_of_branch.get(br.id) in entered_methods
            scores[br.id] = float(approach_level(br, traversed, cdg, in_method))
    return Evaluation(scores, frozenset(traversed), entered_methods,
                      tuple(t.status for t in traces))


# -- archive -----------------------------------------------------------------------

@dataclass
class Archive:
    """Shortest covering test case per branch, plus best fitness seen per branch."""

    covering: dict = field(default_factory=dict)
    best: dict = field(default_factory=dict)

    def covered(self) -> set:
        return set(self.covering)

    def __len__(self) -> int:
        return len(self.covering)

    def total_length(self) -> int:
        return sum(t.length for t in self.covering.values())


def update_archive(archive: Archive, testcase: TestCase, vector: Sequence[float]) -> Archive:
    for i, f in enumerate(vector):
        if f < archive.best.get(i, math.inf):
            archive.best[i] = f
        if f == 0:
            incumbent = archive.covering.get(i)
            if incumbent is None or testcase.length < incumbent.length:
                archive.covering[i] = testcase
    return archive
