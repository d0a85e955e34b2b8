"""Basic-block control-flow graph recovery from runtime bytecode."""
from __future__ import annotations

import json
import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .asm import Instruction
from .opcodes import (COMPARISONS, ISZERO, JUMP, JUMPDEST, JUMPI, TERMINATORS, is_push,
                      stack_effect)

log = logging.getLogger(__name__)

UINT_MASK = (1 << 256) - 1
DEFAULT_VISIT_CAP = 64
MAX_ABSTRACT_STACK = 1024


class UnresolvableJump(Exception):
    def __init__(self, offsets):
        self.offsets = sorted(offsets)
        super().__init__("unresolvable jumps at " + ", ".join(hex(o) for o in self.offsets))


class NoPredicate(Exception):
    """The branch condition is not produced by a comparison inside the block."""


@dataclass
class BasicBlock:
    id: int
    start_offset: int
    instructions: list[Instruction]
    successors: list[int] = field(default_factory=list)
    predecessors: list[int] = field(default_factory=list)
    reachable: bool = True
    unresolved: bool = False

    @property
    def last(self) -> Instruction:
        return self.instructions[-1]

    @property
    def end_offset(self) -> int:
        """Offset of the last instruction."""
        return self.instructions[-1].offset

    @property
    def is_branch(self) -> bool:
        return self.last.opcode == JUMPI

    @property
    def fallthrough_offset(self) -> int:
        return self.last.next_offset

    def offsets(self) -> list[int]:
        return [ins.offset for ins in self.instructions]


@dataclass(frozen=True)
class Predicate:
    kind: str
    negations: int
    comparison_offset: int


@dataclass
class Cfg:
    blocks: dict[int, BasicBlock]
    entry: int
    predicate_of: dict[int, Predicate]
    jump_targets: dict[int, set[int]] = field(default_factory=dict)
    unresolved: set[int] = field(default_factory=set)

    def __post_init__(self):
        self._by_start = {b.start_offset: b.id for b in self.blocks.values()}
        self._by_offset = {}
        for b in self.blocks.values():
            for ins in b.instructions:
                self._by_offset[ins.offset] = b.id

    def block_at(self, start_offset: int) -> Optional[BasicBlock]:
        bid = self._by_start.get(start_offset)
        return None if bid is None else self.blocks[bid]

    def block_containing(self, offset: int) -> Optional[int]:
        return self._by_offset.get(offset)

    def block_start_ids(self) -> dict[int, int]:
        return dict(self._by_start)

    def edges(self) -> list[tuple[int, int]]:
        return [(b.id, s) for b in self.blocks.values() for s in b.successors]

    def taken_successor(self, block_id: int) -> Optional[int]:
        """Block reached when the JUMPI at the end of ``block_id`` jumps."""
        b = self.blocks[block_id]
        targets = self.jump_targets.get(b.end_offset, set())
        if len(targets) != 1:
            return None
        return self._by_start.get(next(iter(targets)))

    def fallthrough_successor(self, block_id: int) -> Optional[int]:
        return self._by_start.get(self.blocks[block_id].fallthrough_offset)

    def to_json(self) -> dict:
        return {
            "entry": self.blocks[self.entry].start_offset,
            "blocks": [
                {
                    "id": b.id,
                    "start": b.start_offset,
                    "end": b.end_offset,
                    "reachable": b.reachable,
                    "unresolved": b.unresolved,
                    "successors": [self.blocks[s].start_offset for s in b.successors],
                    "predicate": (
                        {"kind": p.kind, "negations": p.negations,
                         "comparison_offset": p.comparison_offset}
                        if (p := self.predicate_of.get(b.id)) else None
                    ),
                }
                for b in sorted(self.blocks.values(), key=lambda b: b.id)
            ],
        }

    def to_dot(self) -> str:
        lines = ["digraph cfg {", "  node [shape=box, fontname=monospace];"]
        for b in sorted(self.blocks.values(), key=lambda b: b.id):
            label = f"{b.start_offset:#x}-{b.end_offset:#x}"
            p = self.predicate_of.get(b.id)
            if p:
                label += f"\\n{'!' * p.negations}{p.kind}"
            style = "" if b.reachable else ", style=dashed"
            lines.append(f'  b{b.id} [label="{label}"{style}];')
            for s in b.successors:
                lines.append(f"  b{b.id} -> b{s};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def split_blocks(instructions: Sequence[Instruction]) -> list[list[Instruction]]:
    """Split at JUMPDEST and after JUMP/JUMPI and halting instructions."""
    blocks: list[list[Instruction]] = []
    cur: list[Instruction] = []
    for ins in instructions:
        if ins.opcode == JUMPDEST and cur:
            blocks.append(cur)
            cur = []
        cur.append(ins)
        if ins.opcode == JUMPI or ins.opcode in TERMINATORS or ins.mnemonic == "INVALID":
            blocks.append(cur)
            cur = []
    if cur:
        blocks.append(cur)
    return blocks


# -- abstract interpretation over constant/unknown stack cells ---------------

def _abstract_step(ins: Instruction, stack: list) -> None:
    op = ins.opcode
    if is_push(op):
        stack.append(ins.push_payload)
        return
    if 0x80 <= op <= 0x8F:
        n = op - 0x7F
        stack.append(stack[-n] if len(stack) >= n else None)
        return
    if 0x90 <= op <= 0x9F:
        n = op - 0x8F
        while len(stack) <= n:
            stack.insert(0, None)
        stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
        return
    if op == 0x58:  # PC
        stack.append(ins.offset)
        return
    pops, pushes = stack_effect(op)
    args = [stack.pop() if stack else None for _ in range(pops)]
    if op in (0x01, 0x03, 0x16) and args[0] is not None and args[1] is not None:
        a, b = args
        if op == 0x01:
            stack.append((a + b) & UINT_MASK)
        elif op == 0x03:
            stack.append((a - b) & UINT_MASK)
        else:
            stack.append(a & b)
        return
    stack.extend([None] * pushes)


def _join(a: tuple, b: tuple) -> tuple:
    return tuple(x if x == y else None for x, y in zip(a, b))


@dataclass
class JumpAnalysis:
    targets: dict[int, set[int]]
    unresolved: set[int]
    reached_blocks: set[int]


def analyze_jumps(instructions: Sequence[Instruction],
                  visit_cap: int = DEFAULT_VISIT_CAP) -> JumpAnalysis:
    """Propagate abstract stacks from offset 0 to a fixed point.

    Distinct entry stacks are tracked per block (so return addresses pushed
    by different callers stay separate) up to ``visit_cap`` states; beyond
    that, states of equal height are joined cell-wise.
    """
    blocks = split_blocks(instructions)
    by_start = {b[0].offset: b for b in blocks}
    jumpdests = {ins.offset for ins in instructions if ins.opcode == JUMPDEST}
    seen: dict[int, set[tuple]] = defaultdict(set)
    widened: dict[tuple[int, int], tuple] = {}
    targets: dict[int, set[int]] = defaultdict(set)
    unresolved: set[int] = set()
    if not blocks:
        return JumpAnalysis({}, set(), set())
    work = deque([(blocks[0][0].offset, ())])
    while work:
        start, state = work.popleft()
        if state in seen[start]:
            continue
        if len(seen[start]) >= visit_cap:
            key = (start, len(state))
            prev = widened.get(key)
            joined = state if prev is None else _join(prev, state)
            if joined == prev or joined in seen[start]:
                continue
            widened[key] = joined
            state = joined
        seen[start].add(state)
        block = by_start[start]
        stack = list(state)
        for ins in block[:-1]:
            _abstract_step(ins, stack)
        last = block[-1]
        succ = []
        if last.opcode in (JUMP, JUMPI):
            dest = stack.pop() if stack else None
            if last.opcode == JUMPI:
                if stack:
                    stack.pop()
                succ.append(last.next_offset)
            if dest is None:
                unresolved.add(last.offset)
            elif dest in jumpdests:
                targets[last.offset].add(dest)
                succ.append(dest)
        else:
            _abstract_step(last, stack)
            if last.opcode not in TERMINATORS and last.mnemonic != "INVALID":
                succ.append(last.next_offset)
        out = tuple(stack[-MAX_ABSTRACT_STACK:])
        for s in succ:
            if s in by_start:
                work.append((s, out))
    return JumpAnalysis(dict(targets), unresolved, set(seen))


def resolve_jump_targets(instructions: Sequence[Instruction],
                         visit_cap: int = DEFAULT_VISIT_CAP) -> dict[int, set[int]]:
    """Map each reachable JUMP/JUMPI offset to its resolved destinations.

    Raises UnresolvableJump when some jump consumes an unknown cell.
    """
    result = analyze_jumps(instructions, visit_cap)
    if result.unresolved:
        raise UnresolvableJump(result.unresolved)
    return result.targets


# -- in-block symbolic stack for predicate recovery --------------------------

@dataclass(frozen=True)
class Sym:
    """A symbolic stack cell: the instruction that produced it and its operands."""

    mnemonic: str
    offset: int = -1
    args: tuple = ()
    value: Optional[int] = None

    def depends_on(self, mnemonic: str) -> bool:
        return self.mnemonic == mnemonic or any(a.depends_on(mnemonic) for a in self.args)


def symbolic_stack(instructions: Sequence[Instruction]) -> list[Sym]:
    """Symbolically execute a block; returns the stack before its last instruction."""
    stack: list[Sym] = []
    entry = 0

    def pop() -> Sym:
        nonlocal entry
        if stack:
            return stack.pop()
        entry += 1
        return Sym("ENTRY", value=entry)

    for ins in instructions[:-1]:
        op = ins.opcode
        if is_push(op):
            stack.append(Sym("PUSH", ins.offset, value=ins.push_payload))
        elif 0x80 <= op <= 0x8F:
            n = op - 0x7F
            while len(stack) < n:
                entry += 1
                stack.insert(0, Sym("ENTRY", value=entry))
            stack.append(stack[-n])
        elif 0x90 <= op <= 0x9F:
            n = op - 0x8F
            while len(stack) <= n:
                entry += 1
                stack.insert(0, Sym("ENTRY", value=entry))
            stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
        else:
            pops, pushes = stack_effect(op)
            args = tuple(pop() for _ in range(pops))
            for _ in range(pushes):
                stack.append(Sym(ins.mnemonic, ins.offset, args))
    return stack


def branch_condition(instructions: Sequence[Instruction]) -> Sym:
    """The symbolic condition operand consumed by the block's final JUMPI."""
    if instructions[-1].opcode != JUMPI:
        raise ValueError("block does not end in JUMPI")
    stack = symbolic_stack(instructions)
    if len(stack) < 2:
        return Sym("ENTRY", value=0)
    return stack[-2]


def predicate_from_condition(cond: Sym) -> Predicate:
    node = cond
    negations = 0
    while node.mnemonic == "ISZERO":
        inner = node.args[0]
        if inner.mnemonic == "ISZERO" or inner.mnemonic in COMPARISONS.values():
            negations += 1
            node = inner
        else:
            break
    if node.mnemonic in COMPARISONS.values() or node.mnemonic == "ISZERO":
        return Predicate(node.mnemonic, negations, node.offset)
    raise NoPredicate(f"condition produced by {node.mnemonic}")


def identify_predicate(cfg: Cfg, block_id: int) -> Predicate:
    block = cfg.blocks[block_id]
    if not block.is_branch:
        raise ValueError(f"block {block_id} does not end in JUMPI")
    return predicate_from_condition(branch_condition(block.instructions))


def build_cfg(instructions: Sequence[Instruction],
              visit_cap: int = DEFAULT_VISIT_CAP) -> Cfg:
    raw = split_blocks(instructions)
    blocks = {i: BasicBlock(i, b[0].offset, list(b)) for i, b in enumerate(raw)}
    by_start = {b.start_offset: b.id for b in blocks.values()}
    analysis = analyze_jumps(instructions, visit_cap)
    for b in blocks.values():
        last = b.last
        succ: list[int] = []
        if last.opcode in (JUMP, JUMPI):
            for dest in sorted(analysis.targets.get(last.offset, ())):
                succ.append(by_start[dest])
            if last.opcode == JUMPI and last.next_offset in by_start:
                nxt = by_start[last.next_offset]
                if nxt not in succ:
                    succ.append(nxt)
            if last.offset in analysis.unresolved:
                b.unresolved = True
        elif last.opcode not in TERMINATORS and last.mnemonic != "INVALID":
            if last.next_offset in by_start:
                succ.append(by_start[last.next_offset])
        b.successors = succ
    for b in blocks.values():
        for s in b.successors:
            blocks[s].predecessors.append(b.id)
    entry = by_start[instructions[0].offset]
    reachable = {entry}
    work = [entry]
    while work:
        for s in blocks[work.pop()].successors:
            if s not in reachable:
                reachable.add(s)
                work.append(s)
    for b in blocks.values():
        b.reachable = b.id in reachable
    predicate_of = {}
    for b in blocks.values():
        if b.is_branch and b.reachable:
            try:
                predicate_of[b.id] = identify_predicate_raw(b)
            except NoPredicate:
                pass
    unresolved = {o for o in analysis.unresolved}
    if unresolved:
        log.warning("unresolvable jumps at %s", ", ".join(hex(o) for o in sorted(unresolved)))
    return Cfg(blocks, entry, predicate_of, analysis.targets, unresolved)


def identify_predicate_raw(block: BasicBlock) -> Predicate:
    return predicate_from_condition(branch_condition(block.instructions))


def dump_json(cfg: Cfg) -> str:
    return json.dumps(cfg.to_json(), indent=2) + "\n"
