"""Control-dependency graph: compaction, trimming of compiler patterns, branches."""
from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .abi import FunctionAbi
from .cfg import Cfg, Predicate, Sym, branch_condition
from .dominators import control_dependence, immediate_post_dominators
from .opcodes import COMPARISONS

log = logging.getLogger(__name__)

END = -1

NORMAL = "normal"
DISPATCHER = "dispatcher"
STATE_VARIABLE = "state_variable"
EMPTY_FALLBACK = "empty_fallback"
PAYABLE_CHECK = "payable_check"
METHOD_ENTRY = "method_entry"

TAKEN = "taken"
FALLTHROUGH = "fallthrough"


class PatternMismatch(UserWarning):
    pass


class DisconnectedGraph(Exception):
    pass


@dataclass
class CdgNode:
    id: int
    merged_blocks: list[int]
    kind: str = NORMAL
    method: Optional[FunctionAbi] = None
    successors: list[int] = field(default_factory=list)
    predecessors: list[int] = field(default_factory=list)
    guard_trimmed: bool = False

    @property
    def last_block(self) -> int:
        return self.merged_blocks[-1]


@dataclass(frozen=True)
class Branch:
    id: int
    source: int
    target: int
    polarity: str
    predicate: Optional[Predicate]
    control_parent: Optional[int]
    jumpi_offset: int
    method: str

    def label(self) -> str:
        return f"b{self.id}@{self.jumpi_offset:#x}:{self.polarity}"


@dataclass
class Cdg:
    cfg: Cfg
    nodes: dict[int, CdgNode]
    removed: dict[int, CdgNode]
    branches: list[Branch]
    entries: dict[int, FunctionAbi]
    start: int
    end: int = END
    accessors: set[str] = field(default_factory=set)
    ipdom: dict = field(default_factory=dict)
    dependence: dict = field(default_factory=dict)
    depth: dict = field(default_factory=dict)
    disconnected: set[int] = field(default_factory=set)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.node_of_block: dict[int, int] = {}
        self.position_in_node: dict[int, int] = {}
        for table in (self.nodes, self.removed):
            for n in table.values():
                for i, b in enumerate(n.merged_blocks):
                    self.node_of_block[b] = n.id
                    self.position_in_node[b] = i
        self.branches_from: dict[int, list[Branch]] = {}
        for br in self.branches:
            self.branches_from.setdefault(br.source, []).append(br)
        self.methods_of: dict[int, set[int]] = _methods_reaching(self.nodes, self.entries)
        # block start offset -> (node, position within the node)
        self.block_index: dict[int, tuple[int, int]] = {
            self.cfg.blocks[b].start_offset: (n, i)
            for b, n in self.node_of_block.items() for i in [self.position_in_node[b]]
        }
        self.known_offsets: frozenset = frozenset(
            ins.offset for b in self.cfg.blocks.values() if b.reachable for ins in b.instructions)
        entry_offset = {e: self.cfg.blocks[self.nodes[e].merged_blocks[0]].start_offset
                        for e in self.entries if e in self.nodes}
        self.entry_of_branch: dict[int, Optional[int]] = {}
        for br in self.branches:
            owners = sorted(self.methods_of.get(br.source, ()), key=lambda e: entry_offset[e])
            self.entry_of_branch[br.id] = owners[0] if owners else None

    def is_live(self, node_id: int) -> bool:
        return node_id in self.nodes

    def callable_functions(self) -> list[FunctionAbi]:
        """Public functions worth invoking: retained method entries in ABI order."""
        return [f for f in self.entries.values()]

    def to_json(self) -> dict:
        def node_json(n: CdgNode, removed: bool) -> dict:
            return {
                "id": n.id,
                "kind": n.kind,
                "removed": removed,
                "method": str(n.method) if n.method else None,
                "blocks": [self.cfg.blocks[b].start_offset for b in n.merged_blocks],
                "successors": list(n.successors),
            }
        return {
            "start": self.start,
            "nodes": [node_json(n, False) for n in sorted(self.nodes.values(), key=lambda n: n.id)]
            + [node_json(n, True) for n in sorted(self.removed.values(), key=lambda n: n.id)],
            "branches": [
                {
                    "id": b.id, "source": b.source, "target": b.target, "polarity": b.polarity,
                    "jumpi_offset": b.jumpi_offset, "method": b.method,
                    "predicate": None if b.predicate is None else
                    {"kind": b.predicate.kind, "negations": b.predicate.negations},
                    "control_parent": b.control_parent,
                }
                for b in self.branches
            ],
        }

    def to_dot(self) -> str:
        lines = ["digraph cdg {", "  node [shape=box, fontname=monospace];"]
        for n in sorted(self.nodes.values(), key=lambda n: n.id):
            start = self.cfg.blocks[n.merged_blocks[0]].start_offset
            label = f"n{n.id} @{start:#x}"
            if n.kind != NORMAL:
                label += f"\\n{n.kind}"
            if n.method:
                label += f"\\n{n.method}"
            lines.append(f'  n{n.id} [label="{label}"];')
        for n in sorted(self.removed.values(), key=lambda n: n.id):
            start = self.cfg.blocks[n.merged_blocks[0]].start_offset
            lines.append(f'  n{n.id} [label="n{n.id} @{start:#x}\\n{n.kind}", style=dotted];')
        branch_edges = {(b.source, b.target): b for b in self.branches}
        for n in sorted(self.nodes.values(), key=lambda n: n.id):
            for s in n.successors:
                b = branch_edges.get((n.id, s))
                attr = f' [label="b{b.id}"]' if b else ""
                if n.id == self.start:
                    attr = " [style=bold]"
                lines.append(f"  n{n.id} -> n{s}{attr};")
        lines.append("}")
        return "\n".join(lines) + "\n"


# -- graph helpers -------------------------------------------------------------

def nodes_from_cfg(cfg: Cfg) -> dict[int, CdgNode]:
    """One node per reachable basic block."""
    nodes = {}
    for b in cfg.blocks.values():
        if b.reachable:
            nodes[b.id] = CdgNode(b.id, [b.id])
    for n in nodes.values():
        n.successors = [s for s in cfg.blocks[n.id].successors if s in nodes]
    for n in nodes.values():
        for s in n.successors:
            nodes[s].predecessors.append(n.id)
    return nodes


def _absorb(nodes: dict[int, CdgNode], node: CdgNode, nxt: CdgNode) -> None:
    node.merged_blocks.extend(nxt.merged_blocks)
    node.successors = list(nxt.successors)
    node.guard_trimmed = nxt.guard_trimmed
    for s in node.successors:
        preds = nodes[s].predecessors
        nodes[s].predecessors = [node.id if p == nxt.id else p for p in preds]
    del nodes[nxt.id]


def compactify(node: CdgNode, unmerged: set[int], merged: set[int],
               nodes: dict[int, CdgNode], is_branch, frozen: frozenset = frozenset()) -> None:
    """Absorb the successor chain of ``node`` while it is a single-in/single-out chain."""
    while True:
        if len(node.successors) != 1 or is_branch(node):
            return
        nxt = nodes[node.successors[0]]
        if nxt.id == node.id or len(nxt.predecessors) != 1 or nxt.id in frozen:
            return
        unmerged.discard(nxt.id)
        merged.discard(nxt.id)
        _absorb(nodes, node, nxt)


def compactify_cfg(nodes: dict[int, CdgNode], is_branch, order_key,
                   frozen: frozenset = frozenset()) -> dict[int, CdgNode]:
    """Merge superfluous chains until a fixed point (mutates and returns ``nodes``).

    Seeds are unmerged nodes with no unmerged predecessor; on cycles where no
    such node exists the unmerged node with the smallest ``order_key`` is used.
    """
    unmerged = set(nodes)
    merged: set[int] = set()
    while unmerged:
        ordered = sorted(unmerged, key=order_key)
        seed = next((n for n in ordered
                     if not any(p in unmerged for p in nodes[n].predecessors)), ordered[0])
        unmerged.discard(seed)
        merged.add(seed)
        compactify(nodes[seed], unmerged, merged, nodes, is_branch, frozen)
    return nodes


def _methods_reaching(nodes: dict[int, CdgNode], entries: dict[int, FunctionAbi]) -> dict:
    reach: dict[int, set[int]] = {n: set() for n in nodes}
    for e in entries:
        if e not in nodes:
            continue
        seen = {e}
        work = [e]
        while work:
            n = work.pop()
            reach[n].add(e)
            for s in nodes[n].successors:
                if s not in seen and s in nodes:
                    seen.add(s)
                    work.append(s)
    return reach


# -- pattern recognition ----------------------------------------------------------

_REVERT_STUB_OPS = {"JUMPDEST", "PUSH1", "PUSH2", "DUP1", "DUP2", "SWAP1", "POP",
                    "RETURNDATASIZE", "RETURNDATACOPY", "REVERT"}


def _is_revert_stub(cfg: Cfg, node: CdgNode) -> bool:
    if node.successors:
        return False
    ins = [i for b in node.merged_blocks for i in cfg.blocks[b].instructions]
    return ins[-1].mnemonic == "REVERT" and all(i.mnemonic in _REVERT_STUB_OPS for i in ins)


def _condition(cfg: Cfg, node: CdgNode) -> Optional[Sym]:
    block = cfg.blocks[node.last_block]
    if not block.is_branch:
        return None
    return branch_condition(block.instructions)


def _strip_iszero(sym: Sym) -> Sym:
    while sym.mnemonic == "ISZERO":
        sym = sym.args[0]
    return sym


def _is_callvalue_guard(cond: Sym) -> bool:
    return cond.mnemonic == "ISZERO" and cond.args[0].mnemonic == "CALLVALUE"


def _is_calldatasize_check(cond: Sym) -> bool:
    core = _strip_iszero(cond)
    return core.mnemonic in COMPARISONS.values() and core.depends_on("CALLDATASIZE")


def _selector_constant(cond: Sym, selectors: set[int]) -> Optional[int]:
    core = _strip_iszero(cond)
    if core.mnemonic not in ("EQ", "GT", "LT"):
        return None
    for arg in core.args:
        if arg.mnemonic == "PUSH" and arg.value in selectors:
            return arg.value
    return None


def _branch_arms(cfg: Cfg, node: CdgNode, block_node: dict[int, int]):
    """(taken node, fallthrough node) for a node ending in JUMPI."""
    last = node.last_block
    taken = cfg.taken_successor(last)
    fall = cfg.fallthrough_successor(last)
    return (block_node.get(taken) if taken is not None else None,
            block_node.get(fall) if fall is not None else None)


def _reachable(nodes: dict[int, CdgNode], roots, blocked=frozenset()) -> set[int]:
    seen = set()
    work = [r for r in roots if r in nodes]
    while work:
        n = work.pop()
        if n in seen or n in blocked:
            continue
        seen.add(n)
        work.extend(s for s in nodes[n].successors if s in nodes)
    return seen


def trim_patterns(cfg: Cfg, nodes: dict[int, CdgNode], abi: Sequence[FunctionAbi]):
    """Remove dispatcher, empty-fallback, state-variable and guard patterns.

    Returns (live nodes, removed nodes, start node id, method entries,
    accessor signatures, warnings).  Live nodes are re-compacted.
    """
    warnings: list[str] = []
    removed: dict[int, CdgNode] = {}
    block_node = {b: n.id for n in nodes.values() for b in n.merged_blocks}
    by_selector = {int.from_bytes(f.selector, "big"): f for f in abi
                   if f.selector is not None}
    selectors = set(by_selector)
    entry_id = block_node[cfg.entry]

    def remove(nid: int, kind: str) -> None:
        n = nodes.pop(nid)
        n.kind = kind
        removed[nid] = n
        for s in n.successors:
            if s in nodes:
                nodes[s].predecessors = [p for p in nodes[s].predecessors if p != nid]
        for p in n.predecessors:
            if p in nodes:
                nodes[p].successors = [s for s in nodes[p].successors if s != nid]

    def trim_guard(n: CdgNode) -> bool:
        """Drop the revert arm of a compiler-inserted guard; True if trimmed."""
        cond = _condition(cfg, n)
        if cond is None or not (_is_callvalue_guard(cond) or _is_calldatasize_check(cond)):
            return False
        stubs = [s for s in n.successors if _is_revert_stub(cfg, nodes[s])]
        keep = [s for s in n.successors if s not in stubs]
        if len(stubs) != 1 or len(keep) != 1:
            return False
        stub = nodes[stubs[0]]
        if len(stub.predecessors) == 1:
            remove(stub.id, PAYABLE_CHECK)
        else:
            n.successors = keep
            stub.predecessors = [p for p in stub.predecessors if p != n.id]
        n.guard_trimmed = True
        return True

    # dispatcher: walk from the entry through guard and selector comparisons
    dispatcher: list[int] = []
    entries: dict[int, FunctionAbi] = {}
    fallback_roots: list[int] = []
    work = deque([entry_id])
    visited = set()
    while work:
        nid = work.popleft()
        if nid in visited or nid not in nodes:
            continue
        visited.add(nid)
        n = nodes[nid]
        cond = _condition(cfg, n)
        sel = _selector_constant(cond, selectors) if cond is not None else None
        is_guard = cond is not None and (_is_callvalue_guard(cond) or _is_calldatasize_check(cond))
        straight_into = (cond is None and len(n.successors) == 1 and nid == entry_id)
        if nid != entry_id and sel is None and not is_guard and not straight_into:
            fallback_roots.append(nid)
            continue
        if cond is None and nid == entry_id and not straight_into:
            warnings.append("dispatcher pattern not found at entry")
            break
        dispatcher.append(nid)
        if is_guard and _is_callvalue_guard(cond):
            trim_guard(n)
        taken, _ = _branch_arms(cfg, n, block_node) if cond is not None else (None, None)
        core = _strip_iszero(cond) if cond is not None else None
        for s in list(n.successors):
            if sel is not None and core.mnemonic == "EQ" and s == taken:
                fn = by_selector[sel]
                entries[s] = fn
            else:
                work.append(s)

    if not dispatcher:
        warnings.append("no dispatcher recognised; analysing from the entry block")
        start = entry_id
        nodes[start].kind = DISPATCHER
        for s in nodes[start].successors:
            entries.setdefault(s, FunctionAbi("fallback", is_fallback=True))
    else:
        # collapse the dispatcher region into a single start node
        start = dispatcher[0]
        head = nodes[start]
        region = set(dispatcher)
        blocks = []
        for nid in sorted(region, key=lambda i: cfg.blocks[nodes[i].merged_blocks[0]].start_offset):
            blocks.extend(nodes[nid].merged_blocks)
        outs = []
        for nid in dispatcher:
            for s in nodes[nid].successors:
                if s not in region and s not in outs:
                    outs.append(s)
        for nid in dispatcher[1:]:
            n = nodes.pop(nid)
            for s in n.successors:
                if s in nodes:
                    nodes[s].predecessors = [p for p in nodes[s].predecessors if p != nid]
        head.merged_blocks = blocks
        head.successors = outs
        head.kind = DISPATCHER
        head.guard_trimmed = True
        for s in outs:
            preds = [p for p in nodes[s].predecessors if p not in region]
            nodes[s].predecessors = preds + [start]

    # fallback
    fallback_fn = next((f for f in abi if f.is_fallback), None)
    fallback_roots = [r for r in dict.fromkeys(fallback_roots) if r in nodes and r not in entries]
    if fallback_roots:
        region = _reachable(nodes, fallback_roots, blocked={start, *entries})
        has_branch = any(cfg.blocks[nodes[n].last_block].is_branch for n in region)
        if fallback_fn is None and not has_branch:
            for nid in sorted(region):
                remove(nid, EMPTY_FALLBACK)
        else:
            fn = fallback_fn or FunctionAbi("fallback", is_fallback=True)
            for r in fallback_roots:
                entries[r] = fn

    for nid, fn in entries.items():
        nodes[nid].kind = METHOD_ENTRY
        nodes[nid].method = fn

    # compiler guards inside methods
    for nid in sorted(_reachable(nodes, list(entries))):
        if nid in nodes:
            trim_guard(nodes[nid])

    # state-variable accessors: constant functions with no branches left
    accessors: set[str] = set()
    for nid, fn in list(entries.items()):
        if not fn.constant:
            continue
        others = [e for e in entries if e != nid]
        region = _reachable(nodes, [nid], blocked={start})
        if any(_is_live_branch(cfg, nodes[n]) for n in region):
            continue
        shared = _reachable(nodes, others, blocked={start})
        for r in sorted(region - shared):
            remove(r, STATE_VARIABLE)
        removed[nid].method = fn
        del entries[nid]
        accessors.add(fn.signature)

    order_key = lambda i: cfg.blocks[nodes[i].merged_blocks[0]].start_offset
    compactify_cfg(nodes, lambda n: _is_live_branch(cfg, n) or n.id == start, order_key,
                   frozen=frozenset(entries) | {start})
    return nodes, removed, start, entries, accessors, warnings


def _is_live_branch(cfg: Cfg, node: CdgNode) -> bool:
    return cfg.blocks[node.last_block].is_branch and not node.guard_trimmed


# -- control dependencies and branches ------------------------------------------

def _graph(nodes: dict[int, CdgNode]) -> dict:
    succ = {}
    for n in nodes.values():
        outs = [s for s in n.successors if s in nodes]
        succ[n.id] = outs if outs else [END]
    succ[END] = []
    return succ


def _bfs_depth(nodes: dict[int, CdgNode], start: int) -> dict[int, int]:
    depth = {start: 0}
    work = deque([start])
    while work:
        n = work.popleft()
        for s in nodes[n].successors:
            if s in nodes and s not in depth:
                depth[s] = depth[n] + 1
                work.append(s)
    return depth


def control_dependencies(nodes: dict[int, CdgNode], start: int):
    """Post-dominator tree and control dependence of the live node graph.

    Returns (ipdom, dependence, disconnected) where ``disconnected`` holds
    nodes that cannot reach the exit.
    """
    succ = _graph(nodes)
    ipdom = immediate_post_dominators(succ, END)
    disconnected = {n for n in nodes if n not in ipdom}
    deps = control_dependence(succ, END, ipdom)
    return ipdom, deps, disconnected


def enumerate_branches(cfg: Cfg, nodes: dict[int, CdgNode], entries: dict[int, FunctionAbi],
                       start: int, deps: dict) -> list[Branch]:
    block_node = {b: n.id for n in nodes.values() for b in n.merged_blocks}
    depth = _bfs_depth(nodes, start)
    reach = _methods_reaching(nodes, entries)
    entry_offset = {e: cfg.blocks[nodes[e].merged_blocks[0]].start_offset for e in entries}

    raw = []
    for n in nodes.values():
        if not _is_live_branch(cfg, n) or n.id == start:
            continue
        block = cfg.blocks[n.last_block]
        taken, fall = _branch_arms(cfg, n, block_node)
        methods = sorted(reach.get(n.id, ()), key=lambda e: entry_offset[e])
        owner = methods[0] if methods else None
        order = entry_offset[owner] if owner is not None else 1 << 40
        mname = str(entries[owner]) if owner is not None else "?"
        pred = cfg.predicate_of.get(n.last_block)
        for polarity, target in ((TAKEN, taken), (FALLTHROUGH, fall)):
            if target is None:
                continue
            raw.append((order, block.end_offset, polarity, n.id, target, pred, mname))
    raw.sort(key=lambda r: (r[0], r[1], r[2] != TAKEN))
    edge_branch: dict[tuple[int, int], list[int]] = {}
    for i, r in enumerate(raw):
        edge_branch.setdefault((r[3], r[4]), []).append(i)

    def candidates(node: int, seen: set[int]) -> set[int]:
        out = set()
        for s, t in deps.get(node, ()):
            if s == start:
                continue
            ids = edge_branch.get((s, t))
            if ids:
                out.update(ids)
            elif s not in seen:
                seen.add(s)
                out |= candidates(s, seen)
        return out

    parents = {}
    for i, r in enumerate(raw):
        src = r[3]
        best = None
        for c in candidates(src, {src}):
            csrc = raw[c][3]
            if depth.get(csrc, 1 << 30) >= depth.get(src, 0):
                continue
            key = (depth.get(csrc, 0), raw[c][1], raw[c][2] == TAKEN)
            if best is None or key > best[0]:
                best = (key, c)
        parents[i] = best[1] if best else None

    return [Branch(i, r[3], r[4], r[2], r[5], parents[i], r[1], r[6])
            for i, r in enumerate(raw)]


def build_cdg(cfg: Cfg, abi: Sequence[FunctionAbi]) -> Cdg:
    nodes = nodes_from_cfg(cfg)
    order_key = lambda i: cfg.blocks[nodes[i].merged_blocks[0]].start_offset
    compactify_cfg(nodes, lambda n: cfg.blocks[n.last_block].is_branch, order_key,
                   frozen=frozenset({cfg.entry}))
    nodes, removed, start, entries, accessors, warnings = trim_patterns(cfg, nodes, abi)
    for w in warnings:
        log.warning(w)
    ipdom, deps, disconnected = control_dependencies(nodes, start)
    branches = enumerate_branches(cfg, nodes, entries, start, deps)
    return Cdg(cfg, nodes, removed, branches, entries, start, END, accessors,
               ipdom, deps, _bfs_depth(nodes, start), disconnected, warnings)
