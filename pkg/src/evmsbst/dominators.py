"""Dominator and post-dominator trees (Lengauer-Tarjan) and control dependence."""
from __future__ import annotations

from typing import Hashable, Iterable, Mapping, Optional

Graph = Mapping[Hashable, Iterable[Hashable]]


def immediate_dominators(succ: Graph, entry) -> dict:
    """Immediate dominators of every node reachable from ``entry``.

    Lengauer-Tarjan with path compression (the "simple" variant).  The entry
    maps to None; unreachable nodes are absent from the result.
    """
    order: list = []
    dfnum: dict = {}
    parent: dict = {}
    # iterative DFS
    stack = [(entry, None, iter(succ.get(entry, ())))]
    dfnum[entry] = 0
    order.append(entry)
    parent[entry] = None
    while stack:
        node, _, it = stack[-1]
        for s in it:
            if s not in dfnum:
                dfnum[s] = len(order)
                order.append(s)
                parent[s] = node
                stack.append((s, node, iter(succ.get(s, ()))))
                break
        else:
            stack.pop()

    pred: dict = {n: [] for n in order}
    for n in order:
        for s in succ.get(n, ()):
            if s in pred:
                pred[s].append(n)

    semi = {n: n for n in order}
    ancestor: dict = {n: None for n in order}
    best = {n: n for n in order}
    idom: dict = {n: None for n in order}
    samedom: dict = {n: None for n in order}
    bucket: dict = {n: [] for n in order}

    def lowest_semi_ancestor(v):
        # iterative form of the recursive path-compressing walk
        path = []
        u = v
        while ancestor[ancestor[u]] is not None:
            path.append(u)
            u = ancestor[u]
        for w in reversed(path):
            a = ancestor[w]
            b = best[a]
            ancestor[w] = ancestor[a]
            if dfnum[semi[b]] < dfnum[semi[best[w]]]:
                best[w] = b
        return best[v]

    for n in reversed(order[1:]):
        p = parent[n]
        s = p
        for v in pred[n]:
            if dfnum[v] <= dfnum[n]:
                cand = v
            else:
                cand = semi[lowest_semi_ancestor(v)]
            if dfnum[cand] < dfnum[s]:
                s = cand
        semi[n] = s
        bucket[s].append(n)
        ancestor[n] = p
        best[n] = n
        for v in bucket[p]:
            y = lowest_semi_ancestor(v)
            if semi[y] == semi[v]:
                idom[v] = p
            else:
                samedom[v] = y
        bucket[p] = []
    for n in order[1:]:
        if samedom[n] is not None:
            idom[n] = idom[samedom[n]]
    return idom


def reverse(succ: Graph) -> dict:
    rev: dict = {n: [] for n in succ}
    for n, ss in succ.items():
        for s in ss:
            rev.setdefault(s, []).append(n)
    return rev


def immediate_post_dominators(succ: Graph, exit_node) -> dict:
    """Immediate post-dominators: dominators of the reversed graph from ``exit_node``."""
    return immediate_dominators(reverse(succ), exit_node)


def control_dependence(succ: Graph, exit_node, ipdom: Optional[dict] = None) -> dict:
    """Map each node to the set of edges (s, t) it is control dependent on.

    ``n`` depends on ``s -> t`` iff ``n`` post-dominates ``t`` (reflexively)
    and does not strictly post-dominate ``s``.  Nodes that cannot reach the
    exit have no post-dominator and get no entry.
    """
    if ipdom is None:
        ipdom = immediate_post_dominators(succ, exit_node)
    deps: dict = {}
    for s, ts in succ.items():
        if s not in ipdom:
            continue
        stop = ipdom[s]
        for t in ts:
            if t not in ipdom:
                continue
            runner = t
            while runner is not None and runner != stop:
                deps.setdefault(runner, set()).add((s, t))
                runner = ipdom[runner]
    return deps
