"""Generation engines: random fuzzer and DynaMOSA, sharing one evaluation loop."""
from __future__ import annotations

import logging
import random
import sys
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .artifact import ContractArtifact
from .cdg import Cdg
from .fitness import Archive, Evaluation, evaluate_test_case, update_archive
from .provider import EmbeddedProvider, TraceProvider
from .testgen import GenConfig, Generator, TestCase, crossover, mutate

log = logging.getLogger(__name__)

FUZZER = "fuzzer"
DYNAMOSA = "dynamosa"


class LengthMismatch(ValueError):
    pass


@dataclass
class RunReport:
    contract: str
    branches_found: int
    branches_covered: int
    iterations: int
    total_time_s: float
    chain_time_s: float
    algorithm: str
    seed: int


@dataclass
class GenerationRecord:
    generation: int
    covered: int
    best: dict
    front0: int
    archive_lengths: dict


@dataclass
class RunResult:
    archive: Archive
    report: RunReport
    evaluations: int
    history: list = field(default_factory=list)
    out_of_gas: int = 0


@dataclass
class TargetSet:
    active: set
    covered: set

    def __post_init__(self):
        assert not (self.active & self.covered)


def update_targets(targets: Optional[TargetSet], covered: set, cdg: Cdg,
                   excluded: frozenset = frozenset()) -> TargetSet:
    """Active = uncovered, not excluded, with control parent absent, covered or excluded."""
    covered = set(covered)
    active = set()
    for br in cdg.branches:
        if br.id in covered or br.id in excluded:
            continue
        p = br.control_parent
        if p is None or p in covered or p in excluded:
            active.add(br.id)
    return TargetSet(active, covered)


# -- ranking ---------------------------------------------------------------------

def dominates(u: Sequence[float], v: Sequence[float]) -> bool:
    strictly = False
    for a, b in zip(u, v):
        if a > b:
            return False
        if a < b:
            strictly = True
    return strictly


def subvector_distance(v1: Sequence[float], v2: Sequence[float]) -> int:
    """Number of components in which ``v1`` is strictly worse than ``v2``."""
    if len(v1) != len(v2):
        raise LengthMismatch(f"{len(v1)} != {len(v2)}")
    return sum(1 for a, b in zip(v1, v2) if a > b)


def nondominated_sort(vectors: Sequence[Sequence[float]]) -> list[list[int]]:
    """Fast nondominated sorting; returns fronts as lists of indices in input order."""
    n = len(vectors)
    dominated_by = [[] for _ in range(n)]
    count = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(vectors[i], vectors[j]):
                dominated_by[i].append(j)
                count[j] += 1
            elif dominates(vectors[j], vectors[i]):
                dominated_by[j].append(i)
                count[i] += 1
    fronts = []
    current = [i for i in range(n) if count[i] == 0]
    while current:
        fronts.append(sorted(current))
        nxt = []
        for i in current:
            for j in dominated_by[i]:
                count[j] -= 1
                if count[j] == 0:
                    nxt.append(j)
        current = nxt
    return fronts


def preference_sort(vectors: Sequence[Sequence[float]], lengths: Sequence[int],
                    active: Sequence[int]) -> tuple[list[int], list[int]]:
    """Per active objective, the best member (ties: shorter, then earlier).

    Returns (first front, remaining indices), both in population order.
    """
    f0 = set()
    for b in active:
        best = min(range(len(vectors)), key=lambda i: (vectors[i][b], lengths[i], i))
        f0.add(best)
    rest = [i for i in range(len(vectors)) if i not in f0]
    return sorted(f0), rest


def select_by_subvector(front: list[int], vectors: list[list[float]], selected: list[int],
                        need: int) -> tuple[list[int], dict]:
    """Greedily pick ``need`` members of ``front``, each time the one whose largest
    sub-vector count against the already-selected set is smallest."""
    worst = {c: 0 for c in front}
    for s in selected:
        for c in front:
            d = subvector_distance(vectors[c], vectors[s])
            if d > worst[c]:
                worst[c] = d
    chosen = []
    scores = {}
    pool = list(front)
    while len(chosen) < need and pool:
        pick = min(pool, key=lambda c: (worst[c], c))
        pool.remove(pick)
        chosen.append(pick)
        scores[pick] = worst[pick]
        for c in pool:
            d = subvector_distance(vectors[c], vectors[pick])
            if d > worst[c]:
                worst[c] = d
    return chosen, scores


def rank_population(vectors: list[list[float]], lengths: list[int], active: list[int],
                    size: int) -> tuple[list[int], dict, dict]:
    """Choose ``size`` survivors.  Returns (indices, front rank, sub-vector score)."""
    if not active:
        idx = list(range(min(size, len(vectors))))
        return idx, {i: 0 for i in idx}, {i: 0 for i in idx}
    reduced = [[v[b] for b in active] for v in vectors]
    f0, rest = preference_sort(vectors, lengths, active)
    fronts = [f0] + [[rest[i] for i in fr] for fr in nondominated_sort([reduced[i] for i in rest])]
    chosen: list[int] = []
    rank: dict = {}
    score: dict = {}
    for r, front in enumerate(fronts):
        if not front:
            continue
        if len(chosen) + len(front) <= size:
            for i in front:
                rank[i] = r
                score[i] = 0
            chosen.extend(front)
        else:
            picked, scores = select_by_subvector(front, reduced, chosen, size - len(chosen))
            for i in picked:
                rank[i] = r
                score[i] = scores[i]
            chosen.extend(picked)
        if len(chosen) >= size:
            break
    return chosen, rank, score


def tournament(population: list, rank: dict, score: dict, size: int,
               rng: random.Random) -> int:
    picks = [rng.randrange(len(population)) for _ in range(min(size, len(population)))]
    return min(picks, key=lambda i: (rank.get(i, 0), score.get(i, 0), i))


# -- shared loop ------------------------------------------------------------------

class Runner:
    """Evaluation, archive and bookkeeping shared by both engines."""

    def __init__(self, artifact: ContractArtifact, cdg: Cdg, config: GenConfig,
                 provider: Optional[TraceProvider] = None, progress: bool = False,
                 generator: Optional[Generator] = None):
        self.artifact = artifact
        self.cdg = cdg
        self.config = config
        self.provider = provider or EmbeddedProvider(config, seed=config.rng_seed)
        self.rng = random.Random(config.rng_seed)
        self.gen = generator or Generator.for_contract(artifact, cdg, config)
        self.archive = Archive()
        self.excluded = frozenset(b for b in config.excluded_branches
                                  if 0 <= b < len(cdg.branches))
        self.feasible = {b.id for b in cdg.branches} - self.excluded
        self.cache: dict = {}
        self.evaluations = 0
        self.chain_time = 0.0
        self.out_of_gas = 0
        self.history: list = []
        self.progress = progress
        self.started = time.perf_counter()

    def evaluate(self, tc: TestCase) -> Evaluation:
        self.evaluations += 1
        got = self.cache.get(tc)
        if got is not None:
            return got
        t0 = time.perf_counter()
        handle = self.provider.fresh(self.artifact)
        traces = [self.provider.execute(s, handle) for s in tc.statements]
        self.chain_time += time.perf_counter() - t0
        self.out_of_gas += sum(1 for t in traces if t.status == "out_of_gas")
        ev = evaluate_test_case(tc, traces, self.cdg)
        self.cache[tc] = ev
        return ev

    def evaluate_all(self, cases: list) -> list:
        evs = [self.evaluate(tc) for tc in cases]
        for tc, ev in zip(cases, evs):
            update_archive(self.archive, tc, ev.vector)
        return evs

    def done(self) -> bool:
        return self.feasible <= self.archive.covered()

    def record(self, generation: int, front0: int) -> None:
        covered = len(self.archive.covered() & {b.id for b in self.cdg.branches})
        self.history.append(GenerationRecord(
            generation, covered, dict(self.archive.best), front0,
            {b: t.length for b, t in self.archive.covering.items()}))
        if self.progress:
            print(f"gen {generation} covered {covered}/{len(self.cdg.branches)} "
                  f"front0 {front0} elapsed {time.perf_counter() - self.started:.2f}s",
                  file=sys.stderr)

    def result(self, algorithm: str, iterations: int) -> RunResult:
        total = time.perf_counter() - self.started
        report = RunReport(self.artifact.name, len(self.cdg.branches), len(self.archive),
                           iterations, total, min(self.chain_time, total), algorithm,
                           self.config.rng_seed)
        return RunResult(self.archive, report, self.evaluations, self.history, self.out_of_gas)


def run_fuzzer(artifact: ContractArtifact, cdg: Cdg, config: GenConfig,
               provider: Optional[TraceProvider] = None, progress: bool = False) -> RunResult:
    run = Runner(artifact, cdg, config, provider, progress)
    iterations = 0
    if config.max_generations > 0:
        for generation in range(config.max_generations + 1):
            population = [run.gen.test_case(run.rng) for _ in range(config.population_size)]
            run.evaluate_all(population)
            iterations += 1
            run.record(generation, 0)
            if run.done():
                break
    return run.result(FUZZER, iterations)


def run_dynamosa(artifact: ContractArtifact, cdg: Cdg, config: GenConfig,
                 provider: Optional[TraceProvider] = None, progress: bool = False) -> RunResult:
    run = Runner(artifact, cdg, config, provider, progress)
    rng = run.rng
    n = config.population_size
    iterations = 0
    if config.max_generations <= 0:
        return run.result(DYNAMOSA, 0)
    population = [run.gen.test_case(rng) for _ in range(n)]
    evs = run.evaluate_all(population)
    iterations = 1
    targets = update_targets(None, run.archive.covered(), cdg, run.excluded)
    active = sorted(targets.active)
    chosen, rank, score = rank_population([e.vector for e in evs],
                                          [t.length for t in population], active, n)
    population = [population[i] for i in chosen]
    evs = [evs[i] for i in chosen]
    rank = {k: rank[i] for k, i in enumerate(chosen)}
    score = {k: score[i] for k, i in enumerate(chosen)}
    run.record(0, sum(1 for r in rank.values() if r == 0))
    generation = 0
    while generation < config.max_generations and not run.done():
        generation += 1
        offspring: list = []
        while len(offspring) < n:
            p1 = population[tournament(population, rank, score, config.tournament_size, rng)]
            p2 = population[tournament(population, rank, score, config.tournament_size, rng)]
            if rng.random() < config.crossover_probability:
                c1, c2 = crossover(p1, p2, rng, config.max_statements)
            else:
                c1, c2 = p1, p2
            if rng.random() < config.mutation_probability:
                c1 = mutate(c1, run.gen, rng)
            if rng.random() < config.mutation_probability:
                c2 = mutate(c2, run.gen, rng)
            offspring.extend((c1, c2))
        offspring = offspring[:n]
        off_evs = run.evaluate_all(offspring)
        iterations += 1
        targets = update_targets(targets, run.archive.covered(), cdg, run.excluded)
        active = sorted(targets.active)
        union = population + offspring
        union_evs = evs + off_evs
        chosen, rank_u, score_u = rank_population([e.vector for e in union_evs],
                                                  [t.length for t in union], active, n)
        population = [union[i] for i in chosen]
        evs = [union_evs[i] for i in chosen]
        rank = {k: rank_u[i] for k, i in enumerate(chosen)}
        score = {k: score_u[i] for k, i in enumerate(chosen)}
        run.record(generation, sum(1 for r in rank.values() if r == 0))
    return run.result(DYNAMOSA, iterations)


ENGINES = {FUZZER: run_fuzzer, DYNAMOSA: run_dynamosa}
