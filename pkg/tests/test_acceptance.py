"""Headline acceptance checks; each test prints one PASS/FAIL line."""
import random
import time
from dataclasses import replace

import pytest

from evmsbst import cli
from evmsbst.asm import assemble, disassemble, push_size
from evmsbst.search import run_dynamosa, run_fuzzer

from conftest import FIXTURE_NAMES, FIXTURES, fixture
from test_cdg import check_compaction_preserves_branching, check_post_dominator_oracle
from test_chain import check_atomicity_and_conservation
from test_fitness import check_korel_oracle
from test_report import check_statistics_oracle
from test_search import check_fronts_oracle
from test_testgen import check_operator_closure

NESTED = "vault"          # three nested equality guards on magic constants
DEEPEST = 4               # taken arm of the innermost guard
LOOPING = "spinner"       # unbounded loop


@pytest.fixture
def verdict(capsys):
    """Print ``PASS <label>`` or ``FAIL <label>: reason`` and re-raise failures."""
    class Verdict:
        def __init__(self):
            self.label = None
            self.detail = ""

        def __call__(self, label):
            self.label = label
            return self

        def __enter__(self):
            return self

        def __exit__(self, kind, exc, tb):
            with capsys.disabled():
                note = f" [{self.detail}]" if self.detail else ""
                line = (f"PASS {self.label}{note}" if exc is None
                        else f"FAIL {self.label}{note}: {exc!r}"[:400])
                print("\n" + line)
            return False
    return Verdict()


def _timed(fn, *a):
    t0 = time.perf_counter()
    fn(*a)
    return time.perf_counter() - t0


def test_oracle_equivalences(verdict):
    with verdict("oracle equivalences (post-dominators, fronts, korel, statistics; each < 10 s)"):
        times = {
            "post-dominators": _timed(check_post_dominator_oracle, 100, 0),
            "nondominated sort": _timed(check_fronts_oracle, 100, 50, 5, 0),
            "korel distance": _timed(check_korel_oracle, 10_000, 0),
            "rank-sum and A12": _timed(check_statistics_oracle, 20, 0),
        }
        slow = {k: round(v, 2) for k, v in times.items() if v >= 10}
        assert not slow, f"too slow: {slow}"


def _round_trip_programs(count=2000, seed=0):
    rng = random.Random(seed)
    for _ in range(count):
        code = bytearray()
        for _ in range(rng.randint(1, 60)):
            op = rng.randrange(256)
            code.append(op)
            code += bytes(rng.randrange(256) for _ in range(push_size(op)))
        assert assemble(disassemble(bytes(code))) == bytes(code)
    for name in FIXTURE_NAMES:
        art = fixture(name)[0]
        assert assemble(disassemble(art.code)) == art.code


def _archive_monotone(name):
    art, cdg, cfg = fixture(name)
    res = run_dynamosa(art, cdg, cfg)
    prev_cov, prev_best, prev_len = 0, {}, {}
    for rec in res.history:
        assert rec.covered >= prev_cov
        assert all(rec.best[b] <= v for b, v in prev_best.items())
        assert all(rec.archive_lengths[b] <= v for b, v in prev_len.items())
        prev_cov, prev_best, prev_len = rec.covered, rec.best, rec.archive_lengths


def test_structural_invariants(verdict):
    with verdict("structural invariants (round-trip, compaction, atomicity, closure, archive)"):
        _round_trip_programs()
        for name in FIXTURE_NAMES:
            if name != LOOPING:
                check_compaction_preserves_branching(name)
        check_atomicity_and_conservation(1000, 0)
        check_operator_closure(10_000, 0)
        for name in ["vault", "escrow", "timelock"]:
            _archive_monotone(name)


def _feasible(cdg, cfg):
    return {b.id for b in cdg.branches} - set(cfg.excluded_branches)


def test_end_to_end_coverage(verdict):
    with verdict("end-to-end: both engines, 10/10 seeds, 100% feasible coverage, < 60 s"):
        problems = []
        for name in FIXTURE_NAMES:
            if name == NESTED:
                continue
            art, cdg, cfg = fixture(name)
            assert cfg.population_size == 50 and cfg.max_generations == 100
            feasible = _feasible(cdg, cfg)
            for engine in (run_fuzzer, run_dynamosa):
                for seed in range(10):
                    t0 = time.perf_counter()
                    res = engine(art, cdg, cfg.with_overrides(rng_seed=seed))
                    took = time.perf_counter() - t0
                    missing = feasible - res.archive.covered()
                    if missing or took >= 60:
                        problems.append((name, engine.__name__, seed, sorted(missing),
                                         round(took, 1)))
        assert not problems, problems


def test_differential_nested_guards(verdict, tmp_path):
    with verdict("differential on nested guards: dynamosa >= 8/10, unseeded fuzzer <= 2/10"):
        hits = {"fuzzer": [], "dynamosa": []}
        real = dict(cli.ENGINES)

        def recording(alg):
            def run(art, cdg, cfg, *a, **kw):
                res = real[alg](art, cdg, cfg, *a, **kw)
                hits[alg].append(DEEPEST in res.archive.covered())
                return res
            return run

        patched = {alg: recording(alg) for alg in real}
        old = dict(cli.ENGINES)
        cli.ENGINES.update(patched)
        try:
            code = cli.main(["bench", "--fixtures", str(FIXTURES), "--contracts", NESTED,
                             "--runs", "10", "--fuzzer-seeding-probability", "0",
                             "--out", str(tmp_path)])
        finally:
            cli.ENGINES.update(old)
        assert code == 0
        header, row = (tmp_path / "comparison.csv").read_text().splitlines()
        stats = dict(zip(header.split(","), row.split(",")))
        verdict.detail = (f"deepest branch: dynamosa {sum(hits['dynamosa'])}/10, "
              f"fuzzer {sum(hits['fuzzer'])}/10; A12 {stats['a12']} "
              f"({stats['effect']}), p {stats['p_value']}")
        assert stats["status"] == "ok"
        assert sum(hits["dynamosa"]) >= 8
        assert sum(hits["fuzzer"]) <= 2


def test_determinism(verdict, tmp_path):
    with verdict("determinism: byte-identical suite and meta on every fixture"):
        differing = []
        for name in FIXTURE_NAMES:
            for alg in ("fuzzer", "dynamosa"):
                outs = []
                for k in range(2):
                    out = tmp_path / f"{name}-{alg}-{k}"
                    code = cli.main(["run", "--fixture", str(FIXTURES / name), "--algorithm",
                                     alg, "--seed", "3", "--no-timing", "--out", str(out)])
                    assert code in (cli.EXIT_FULL, cli.EXIT_PARTIAL)
                    outs.append(out)
                for suffix in ("suite.txt", "meta.csv"):
                    a = (outs[0] / f"{name}.{suffix}").read_bytes()
                    b = (outs[1] / f"{name}.{suffix}").read_bytes()
                    if a != b:
                        differing.append((name, alg, suffix))
        assert not differing, differing


def test_out_of_gas_reported(verdict, tmp_path, capsys):
    with verdict("out-of-gas: unbounded loop detected and reported without crashing"):
        art, cdg, cfg = fixture(LOOPING)
        res = run_dynamosa(art, cdg, cfg.with_overrides(population_size=10, max_generations=3))
        assert res.out_of_gas > 0
        capsys.readouterr()
        code = cli.main(["run", "--fixture", str(FIXTURES / LOOPING), "--out", str(tmp_path)])
        err = capsys.readouterr().err
        assert code == cli.EXIT_FULL
        assert "ran out of gas" in err
        assert (tmp_path / f"{LOOPING}.suite.txt").is_file()
