import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from evmsbst.cdg import END, FALLTHROUGH, TAKEN
from evmsbst.fitness import (
    Archive, approach_level, evaluate_test_case, find_next_node, korel_f, node_visits, normalize,
    update_archive,
)
from evmsbst.provider import EmbeddedProvider
from evmsbst.testgen import Constructor, FunctionCall, TestCase

from conftest import FIXTURE_NAMES, fixture, random_runs

U = 2 ** 256
BOUNDARY = [0, 1, 2, 2 ** 255 - 1, 2 ** 255, U - 2, U - 1, -1, -(2 ** 255)]


def test_korel_examples():
    assert korel_f("GT", 0, TAKEN, 3, 5) == 3
    assert korel_f("EQ", 0, TAKEN, 7, 7) == 0
    assert korel_f("EQ", 0, FALLTHROUGH, 4, 4) == 1
    assert korel_f("LT", 0, FALLTHROUGH, 1, 9) == 8      # needs a >= b
    assert korel_f("ISZERO", 0, TAKEN, 6, 0) == 6
    assert korel_f("ISZERO", 1, TAKEN, 0, 0) == 1        # double negation: a != 0
    assert korel_f("SLT", 0, TAKEN, -1, -1) == 1


def _reference(kind, negations, polarity, a, b):
    """Distance from the satisfying region, written as a case table."""
    want = {"GT": "gt", "SGT": "gt", "LT": "lt", "SLT": "lt", "EQ": "eq", "ISZERO": "eq"}[kind]
    flip = (negations + (polarity == FALLTHROUGH)) % 2 == 1
    table = {
        ("gt", False): max(0, b - a + 1),
        ("gt", True): max(0, a - b),
        ("lt", False): max(0, a - b + 1),
        ("lt", True): max(0, b - a),
        ("eq", False): abs(a - b),
        ("eq", True): 1 if a == b else 0,
    }
    return table[(want, flip)]


def check_korel_oracle(cases=10_000, seed=0):
    rng = random.Random(seed)
    kinds = ["GT", "SGT", "LT", "SLT", "EQ", "ISZERO"]
    for _ in range(cases):
        kind = rng.choice(kinds)
        signed = kind.startswith("S")
        pool = BOUNDARY if signed else [v for v in BOUNDARY if v >= 0]
        pick = lambda: rng.choice(pool) if rng.random() < 0.3 else (
            rng.randrange(-(2 ** 255), 2 ** 255) if signed else rng.randrange(U))
        a = pick()
        b = 0 if kind == "ISZERO" else pick()
        neg, pol = rng.randrange(4), rng.choice([TAKEN, FALLTHROUGH])
        got = korel_f(kind, neg, pol, a, b)
        assert got == _reference(kind, neg, pol, a, b), (kind, neg, pol, a, b)
        assert got >= 0
    return cases


def test_korel_matches_reference():
    assert check_korel_oracle() == 10_000


def test_taken_and_fallthrough_are_complementary():
    for kind in ["GT", "LT", "EQ"]:
        for a in [0, 1, 5]:
            for b in [0, 1, 5]:
                t = korel_f(kind, 0, TAKEN, a, b)
                f = korel_f(kind, 0, FALLTHROUGH, a, b)
                assert (t == 0) != (f == 0)


def test_normalize_examples():
    assert normalize(0) == 0.0
    assert normalize(2) == pytest.approx(2 / 3)
    big = normalize(10 ** 30)
    assert normalize(10 ** 29) < big < 1
    assert isinstance(big, Fraction)
    with pytest.raises(ValueError):
        normalize(-1)


@given(st.integers(0, U), st.integers(0, U))
def test_normalize_monotone_and_bounded(x, y):
    nx, ny = normalize(x), normalize(y)
    assert 0 <= nx < 1
    if x < y:
        assert nx < ny


# -- evaluation on the auction contract ------------------------------------------------

def _run(name, tc, seed=0):
    art, cdg, cfg = fixture(name)
    provider = EmbeddedProvider(cfg, seed=seed)
    handle = provider.fresh(art)
    traces = [provider.execute(s, handle) for s in tc.statements]
    return evaluate_test_case(tc, traces, cdg), traces


def _fn(name, fname):
    art = fixture(name)[0]
    return next(f for f in art.abi if f.name == fname)


def test_low_bid_distance():
    a0 = fixture("auction")[2].accounts[0]
    a1 = fixture("auction")[2].accounts[1]
    tc = TestCase((Constructor((10 ** 9,), 5, a0), FunctionCall(_fn("auction", "Bid"), (), 3, a1)))
    ev, _ = _run("auction", tc)
    # msg.value > HighBid fails by 5 - 3 + 1
    assert ev.vector[2] == pytest.approx(3 / 4)
    assert ev.vector[3] == 0.0
    assert ev.vector[4] == 1.0               # nested under the unmet guard
    assert ev.vector[0] == ev.vector[1] == 1.0   # Claim never entered
    assert ev.covered == {3}


def test_high_bid_covers_guard():
    cfg = fixture("auction")[2]
    tc = TestCase((Constructor((10 ** 9,), 5, cfg.accounts[0]),
                   FunctionCall(_fn("auction", "Bid"), (), 6, cfg.accounts[1])))
    ev, _ = _run("auction", tc)
    assert {2, 4} <= ev.covered
    assert ev.vector[3] > 0


def test_find_next_node_follows_taken_edge():
    art, cdg, cfg = fixture("auction")
    tc = TestCase((Constructor((0,), 5, cfg.accounts[0]),
                   FunctionCall(_fn("auction", "Bid"), (), 6, cfg.accounts[1])))
    _, traces = _run("auction", tc)
    br = cdg.branches[2]
    assert find_next_node(br.source, traces[1], cdg) == br.target
    visits = node_visits(traces[1], cdg)
    assert find_next_node(visits[-1].node, traces[1], cdg, visits[-1].first_step) == END


def _chain_cdg():
    from evmsbst.cdg import build_cdg
    from evmsbst.cfg import build_cfg
    from conftest import one_method
    body = ("PUSH1 1 CALLVALUE GT @a JUMPI STOP a: PUSH1 2 CALLVALUE GT @b JUMPI STOP "
            "b: PUSH1 3 CALLVALUE GT @c JUMPI STOP c: STOP")
    ins, abi = one_method(body)
    return build_cdg(build_cfg(ins), abi)


def test_approach_level_on_guard_chain():
    cdg = _chain_cdg()
    deepest = [b for b in cdg.branches if b.polarity == TAKEN][-1]
    chain = 0
    p = deepest.control_parent
    while p is not None:
        chain += 1
        p = cdg.branches[p].control_parent
    assert chain == 2
    assert approach_level(deepest, {deepest.control_parent}, cdg) == 1
    assert approach_level(deepest, set(), cdg) == chain
    assert approach_level(deepest, set(), cdg, entered=False) == chain + 1


def test_update_archive_keeps_shortest():
    c, f = Constructor(), FunctionCall(_fn("auction", "Claim"))
    long = TestCase((c, f, f, f))
    short = TestCase((c, f))
    arch = Archive()
    update_archive(arch, long, [0.0, 0.5])
    update_archive(arch, short, [0.0, 0.7])
    update_archive(arch, long, [0.0, 0.2])
    assert arch.covering == {0: short}
    assert arch.best == {0: 0.0, 1: 0.2}
    assert arch.total_length() == 2


# -- properties over executed random test cases -----------------------------------

@pytest.mark.parametrize("name", [n for n in FIXTURE_NAMES if n != "spinner"])
def test_zero_exactly_when_covered(name):
    cdg = fixture(name)[1]
    for tc, traces in random_runs(name):
        ev = evaluate_test_case(tc, traces, cdg)
        assert len(ev.vector) == len(cdg.branches)
        for i, v in enumerate(ev.vector):
            assert (v == 0) == (i in ev.covered)
            assert v >= 0


def check_concatenation_minimality(name):
    """Appending statements never loses coverage, and per-branch scores never exceed
    those of a prefix evaluated alone (each branch keeps its best visit)."""
    art, cdg, cfg = fixture(name)
    runs = random_runs(name)
    for tc, traces in runs[:20]:
        full = evaluate_test_case(tc, traces, cdg)
        for k in range(2, len(tc) + 1):
            prefix = TestCase(tc.statements[:k])
            ev = evaluate_test_case(prefix, traces[:k], cdg)
            assert ev.covered <= full.covered
            for i, (p, q) in enumerate(zip(ev.vector, full.vector)):
                if i not in full.covered and p < 1:
                    assert q <= p
    return True


@pytest.mark.parametrize("name", ["auction", "token", "vault"])
def test_concatenation_minimality(name):
    assert check_concatenation_minimality(name)


def test_equality_distance_shrinks_toward_target():
    name = "vault"
    art, cdg, cfg = fixture(name)
    unlock = _fn(name, "unlock")
    # the outer guard compares the first argument against 0xC0FFEE
    br = next(b for b in cdg.branches if b.control_parent is None and b.polarity == FALLTHROUGH)
    scores = []
    for guess in [0, 0xC0FF00, 0xC0FFED, 0xC0FFEE]:
        tc = TestCase((Constructor((), 0, cfg.accounts[0]),
                       FunctionCall(unlock, (guess, 0, 0), 0, cfg.accounts[1])))
        scores.append(_run(name, tc)[0].vector[br.id])
    assert scores[0] > scores[1] > scores[2] > scores[3] == 0
    assert scores[2] == pytest.approx(1 / 2)
