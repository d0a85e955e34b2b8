import random

import pytest

from evmsbst.cdg import (
    DISPATCHER, EMPTY_FALLBACK, END, FALLTHROUGH, METHOD_ENTRY, PAYABLE_CHECK, STATE_VARIABLE,
    TAKEN, CdgNode, build_cdg, compactify, compactify_cfg, nodes_from_cfg,
)
from evmsbst.cfg import build_cfg
from evmsbst.dominators import control_dependence, immediate_dominators, immediate_post_dominators
from evmsbst.testgen import FunctionCall

import oracles
from conftest import FIXTURE_NAMES, fixture, one_method, random_runs


def graph(edges, n=None):
    ids = sorted({a for a, _ in edges} | {b for _, b in edges} | set(range(n or 0)))
    nodes = {i: CdgNode(i, [i]) for i in ids}
    for a, b in edges:
        nodes[a].successors.append(b)
        nodes[b].predecessors.append(a)
    return nodes


def compact(nodes):
    return compactify_cfg(nodes, lambda n: len(n.successors) > 1, lambda i: i)


# -- compactification -------------------------------------------------------------

def test_chain_contracts_to_one_node():
    out = compact(graph([(0, 1), (1, 2)]))
    assert [n.merged_blocks for n in out.values()] == [[0, 1, 2]]


def test_diamond_unchanged():
    out = compact(graph([(0, 1), (0, 2), (1, 3), (2, 3)]))
    assert len(out) == 4


def test_multi_predecessor_successor_not_absorbed():
    # A->B->C plus D->C: A and B merge, C stays separate
    out = compact(graph([(0, 1), (1, 2), (3, 2)]))
    assert sorted(n.merged_blocks for n in out.values()) == [[0, 1], [2], [3]]


def test_compactify_two_successors_unchanged():
    nodes = graph([(0, 1), (0, 2)])
    compactify(nodes[0], {1, 2}, {0}, nodes, lambda n: len(n.successors) > 1)
    assert nodes[0].merged_blocks == [0] and len(nodes) == 3


def test_compactify_successor_with_two_predecessors_unchanged():
    nodes = graph([(0, 1), (2, 1)])
    compactify(nodes[0], {1, 2}, {0}, nodes, lambda n: len(n.successors) > 1)
    assert nodes[0].merged_blocks == [0] and len(nodes) == 3


def test_compactify_absorbs_chain_of_five():
    nodes = graph([(i, i + 1) for i in range(5)])
    compactify(nodes[0], set(range(1, 6)), {0}, nodes, lambda n: False)
    assert list(nodes) == [0] and nodes[0].merged_blocks == list(range(6))


def test_cycle_terminates():
    out = compact(graph([(0, 1), (1, 2), (2, 0)]))
    assert sum(len(n.merged_blocks) for n in out.values()) == 3


@pytest.mark.parametrize("seed", range(20))
def test_compaction_reaches_fixed_point(seed):
    rng = random.Random(seed)
    n = rng.randint(2, 14)
    edges = {(i, rng.randint(i + 1, n)) for i in range(n) for _ in range(rng.randint(1, 2))}
    before = len(graph(edges))
    out = compact(graph(edges))
    assert len(out) <= before
    for node in out.values():
        if len(node.successors) == 1:
            nxt = out[node.successors[0]]
            assert len(nxt.predecessors) != 1 or nxt.id == node.id


# -- post-dominators and control dependence ------------------------------------------

def random_dag_like(rng, n):
    succ = {i: [] for i in range(n)}
    for i in range(n):
        for _ in range(rng.randint(0, 2)):
            j = rng.randint(i + 1, n) if rng.random() < 0.85 else rng.randint(0, i)
            if j < n and j not in succ[i]:
                succ[i].append(j)
    for i in range(n):
        if not succ[i]:
            succ[i] = [END]
    succ[END] = []
    return succ


def check_post_dominator_oracle(count=100, seed=0):
    rng = random.Random(seed)
    for _ in range(count):
        succ = random_dag_like(rng, rng.randint(1, 12))
        ipdom = immediate_post_dominators(succ, END)
        assert ipdom == oracles.brute_ipdom(succ, END)
        assert control_dependence(succ, END, ipdom) == oracles.brute_control_dependence(succ, END)


def test_post_dominators_match_brute_force():
    check_post_dominator_oracle()


def test_dominators_diamond():
    succ = {0: [1, 2], 1: [3], 2: [3], 3: []}
    assert immediate_dominators(succ, 0) == {0: None, 1: 0, 2: 0, 3: 0}


# -- hand-built contracts -----------------------------------------------------------

def cdg_of(body, **kw):
    ins, abi = one_method(body, **kw)
    return build_cdg(build_cfg(ins), abi)


def test_straight_line_method_has_no_branches():
    assert cdg_of("PUSH1 4 CALLDATALOAD POP STOP").branches == []


def test_if_then_else_arms_have_no_parent():
    c = cdg_of("PUSH1 4 CALLDATALOAD PUSH1 5 GT @a JUMPI PUSH1 1 POP STOP a: STOP")
    assert [(b.polarity, b.control_parent) for b in c.branches] == [
        (TAKEN, None), (FALLTHROUGH, None)]


def test_nested_if_parent_is_outer_taken_branch():
    c = cdg_of("PUSH1 4 CALLDATALOAD PUSH1 5 GT @inner JUMPI STOP "
               "inner: PUSH1 36 CALLDATALOAD PUSH1 7 EQ @deep JUMPI STOP deep: STOP")
    outer_taken = next(b.id for b in c.branches if b.polarity == TAKEN and b.predicate.kind == "GT")
    inner = [b for b in c.branches if b.predicate.kind == "EQ"]
    assert len(inner) == 2 and all(b.control_parent == outer_taken for b in inner)


def test_three_independent_ifs_give_six_branches():
    body = " ".join(
        f"PUSH1 {4 + 32 * k} CALLDATALOAD PUSH1 {k} EQ @j{k} JUMPI j{k}:" for k in range(3)) + " STOP"
    c = cdg_of(body)
    assert len(c.branches) == 6
    assert [b.id for b in c.branches] == list(range(6))
    assert all(b.control_parent is None for b in c.branches)


def test_value_guard_trimmed_for_non_payable():
    body = ("CALLVALUE DUP1 ISZERO @ok JUMPI PUSH1 0 DUP1 REVERT ok: POP "
            "PUSH1 4 CALLDATALOAD PUSH1 5 GT @a JUMPI STOP a: STOP")
    c = cdg_of(body, payable=False)
    assert len(c.branches) == 2
    assert all(b.predicate.kind == "GT" for b in c.branches)
    assert any(n.kind == PAYABLE_CHECK for n in c.removed.values())


# -- fixtures -----------------------------------------------------------------------

def test_auction_trimming():
    _, c, _ = fixture("auction")
    assert sorted(f.name for f in c.entries.values()) == ["Bid", "Claim"]
    assert c.nodes[c.start].kind == DISPATCHER
    assert {"Seller()", "Frontrunner()", "HighBid()", "CloseTime()"} <= c.accessors
    assert any(n.kind == EMPTY_FALLBACK for n in c.removed.values())
    assert any(n.kind == STATE_VARIABLE for n in c.removed.values())
    kinds = {b.method: b.predicate.kind for b in c.branches if b.predicate}
    assert kinds["Claim()"] == "GT" and kinds["Bid()"] in ("GT", "ISZERO")
    gt = [b for b in c.branches if b.method == "Bid()" and b.predicate.kind == "GT"]
    assert len(gt) == 2
    for n in c.nodes.values():
        if n.kind == METHOD_ENTRY:
            assert n.method is not None


def test_user_fallback_is_kept():
    _, c, _ = fixture("piggybank")
    assert any(f.is_fallback for f in c.entries.values())


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_branch_ids_dense_and_parents_acyclic(name):
    _, c, _ = fixture(name)
    assert [b.id for b in c.branches] == list(range(len(c.branches)))
    assert not any(b.target == c.start for b in c.branches)
    for b in c.branches:
        seen = set()
        p = b.control_parent
        while p is not None:
            assert p not in seen
            seen.add(p)
            p = c.branches[p].control_parent
    pairs = {}
    for b in c.branches:
        pairs.setdefault(b.jumpi_offset, []).append(b.polarity)
    assert all(sorted(v) == [FALLTHROUGH, TAKEN] for v in pairs.values())


def _compacted(name):
    _, c, _ = fixture(name)
    cfg = c.cfg
    nodes = nodes_from_cfg(cfg)
    compactify_cfg(nodes, lambda n: cfg.blocks[n.last_block].is_branch,
                   lambda i: cfg.blocks[nodes[i].merged_blocks[0]].start_offset,
                   frozen=frozenset({cfg.entry}))
    return cfg, nodes


def branching_sequences(cfg, nodes, offsets):
    """Executed JUMPIs as seen through blocks and through compacted nodes."""
    node_of = {b: n.id for n in nodes.values() for b in n.merged_blocks}
    ends = {cfg.blocks[n.last_block].end_offset: n.id for n in nodes.values()
            if cfg.blocks[n.last_block].is_branch}
    by_block = [o for o in offsets
                if cfg.blocks[cfg.block_containing(o)].is_branch
                and o == cfg.blocks[cfg.block_containing(o)].end_offset]
    by_node = [o for o in offsets if o in ends]
    moves = []
    prev = None
    for o in offsets:
        n = node_of[cfg.block_containing(o)]
        if prev is not None and n != prev:
            moves.append((prev, n))
        prev = n
    return by_block, by_node, moves


def check_compaction_preserves_branching(name, runs=None):
    cfg, nodes = _compacted(name)
    assert len(nodes) <= sum(1 for b in cfg.blocks.values() if b.reachable)
    for tc, traces in (runs or random_runs(name)):
        for s, t in zip(tc.statements, traces):
            if not isinstance(s, FunctionCall):
                continue
            by_block, by_node, moves = branching_sequences(cfg, nodes, t.executed_offsets)
            assert by_block == by_node
            for a, b in moves:
                assert b in nodes[a].successors


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_compaction_preserves_branching_structure(name):
    check_compaction_preserves_branching(name)


def test_cdg_dumps(auction):
    _, c, _ = auction
    doc = c.to_json()
    assert len(doc["branches"]) == len(c.branches)
    assert c.to_dot().startswith("digraph")
