import math
import random

import pytest

from evmsbst.fitness import Archive, update_archive
from evmsbst.report import (
    EmptySample, SuiteSyntaxError, effect_size_label, emit_meta_csv, emit_suite, format_value,
    parse_meta_csv, parse_suite, parse_value, vargha_delaney_a12, wilcoxon_rank_sum,
)
from evmsbst.abi import parse_type
from evmsbst.fitness import evaluate_test_case
from evmsbst.provider import EmbeddedProvider
from evmsbst.search import RunReport, run_dynamosa

from conftest import fixture, random_runs


def test_a12_examples():
    assert vargha_delaney_a12([1, 2, 3], [4, 5, 6]) == 0.0
    assert vargha_delaney_a12([4, 5, 6], [1, 2, 3]) == 1.0
    assert vargha_delaney_a12([1, 1], [1, 1]) == 0.5
    assert vargha_delaney_a12([1, 2], [1, 3]) == 0.375
    with pytest.raises(EmptySample):
        vargha_delaney_a12([], [1])


@pytest.mark.parametrize("a12,label", [(0.5, "negligible"), (0.55, "negligible"),
                                       (0.56, "small"), (0.36, "medium"), (0.71, "large"),
                                       (0.0, "large")])
def test_effect_labels(a12, label):
    assert effect_size_label(a12) == label


def check_statistics_oracle(pairs=20, seed=0):
    from scipy.stats import mannwhitneyu
    rng = random.Random(seed)
    for k in range(pairs):
        n1, n2 = rng.randint(3, 15), rng.randint(3, 15)
        pool = [rng.randint(0, 6) for _ in range(4)] if k % 2 else None
        draw = (lambda: rng.choice(pool)) if pool else (lambda: rng.random())
        xs, ys = [draw() for _ in range(n1)], [draw() for _ in range(n2)]
        if len(set(xs + ys)) == 1:
            continue
        res = mannwhitneyu(xs, ys, alternative="two-sided", method="asymptotic",
                           use_continuity=True)
        assert abs(wilcoxon_rank_sum(xs, ys) - res.pvalue) <= 1e-9
        assert abs(vargha_delaney_a12(xs, ys) - res.statistic / (n1 * n2)) <= 1e-6
    return pairs


def test_statistics_match_scipy():
    assert check_statistics_oracle() == 20


def test_wilcoxon_extremes():
    assert wilcoxon_rank_sum([3, 3, 3], [3, 3, 3]) == 1.0
    assert wilcoxon_rank_sum(range(1, 11), range(11, 21)) < 0.001
    with pytest.raises(EmptySample):
        wilcoxon_rank_sum([1], [])


# -- suite text ------------------------------------------------------------------

@pytest.mark.parametrize("text,value", [
    ("uint8", 7), ("int256", -5), ("bool", True), ("address", 0xAB),
    ("bytes4", b"\x01\x02\x03\x04"), ("bytes", b""), ("string", 'a "q", [x]'),
    ("uint256[]", (1, 2)), ("string[2]", ("a,b", "]")), ("bool[][]", ((True,), ())),
])
def test_value_round_trip(text, value):
    t = parse_type(text)
    assert parse_value(t, format_value(t, value)) == value


def test_empty_suite():
    text = emit_suite(Archive(), contract="X")
    assert text == "# suite for X\n"
    assert parse_suite(text, []) == []


def test_shared_case_is_listed_once():
    art, cdg, _ = fixture("auction")
    tc = random_runs("auction")[0][0]
    arch = Archive()
    update_archive(arch, tc, [0.0, 0.0, 1.0])
    text = emit_suite(arch, cdg, "Auction", art.constructor)
    assert text.count("\ntest ") == 1
    assert "covers 0:" in text and " 1:" in text
    [(back, covers)] = parse_suite(text, art.abi)
    assert back == tc and covers == [0, 1]


def test_constructor_abi_required_for_arguments():
    art, cdg, _ = fixture("auction")
    arch = Archive()
    update_archive(arch, random_runs("auction")[0][0], [0.0])
    with pytest.raises(ValueError):
        emit_suite(arch, cdg)


@pytest.mark.parametrize("bad", ["end", "test 1 covers 0\n  call nope() from 0x01 value 0\nend",
                                 "test 1 covers 0\n", "  pass_time 3"])
def test_suite_syntax_errors(bad):
    with pytest.raises(SuiteSyntaxError):
        parse_suite(bad, fixture("auction")[0].abi)


@pytest.mark.parametrize("name", ["auction", "token", "timelock", "escrow"])
def test_suite_round_trip_and_replay(name):
    art, cdg, cfg = fixture(name)
    res = run_dynamosa(art, cdg, cfg.with_overrides(population_size=10, max_generations=5))
    text = emit_suite(res.archive, cdg, name, art.constructor)
    parsed = parse_suite(text, art.abi)
    assert emit_suite(res.archive, cdg, name, art.constructor) == text
    seen = set()
    for tc, covers in parsed:
        provider = EmbeddedProvider(cfg, seed=cfg.rng_seed)
        handle = provider.fresh(art)
        traces = [provider.execute(s, handle) for s in tc.statements]
        # replaying a suite case covers what it claims
        assert set(covers) <= evaluate_test_case(tc, traces, cdg).covered
        seen |= set(covers)
    assert seen == res.archive.covered()


# -- meta CSV ----------------------------------------------------------------------

def test_meta_round_trip():
    reports = [RunReport("A", 6, 5, 3, 0.1 + 0.2, 0.05, "dynamosa", 0),
               RunReport("B, quoted", 0, 0, 0, 0.0, 0.0, "fuzzer", 9)]
    text = emit_meta_csv(reports)
    assert text.splitlines()[0] == ("contract,branches_found,branches_covered,iterations,"
                                    "total_time_s,chain_time_s,algorithm,seed")
    assert parse_meta_csv(text) == reports
    assert math.isclose(parse_meta_csv(text)[0].total_time_s, 0.1 + 0.2, rel_tol=0)


def test_meta_requires_rows():
    with pytest.raises(ValueError):
        emit_meta_csv([])
    with pytest.raises(ValueError):
        parse_meta_csv("nope\n")
