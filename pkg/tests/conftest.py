import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evmsbst.artifact import load_fixture  # noqa: E402
from evmsbst.cdg import build_cdg  # noqa: E402
from evmsbst.cfg import build_cfg  # noqa: E402
from evmsbst.testgen import GenConfig, load_config  # noqa: E402

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
FIXTURE_NAMES = sorted(p.name for p in FIXTURES.iterdir() if (p / "abi.json").is_file())


@functools.lru_cache(maxsize=None)
def fixture(name):
    """(artifact, cdg, config) for a checked-in fixture, cached per session."""
    art = load_fixture(FIXTURES / name)
    cdg = build_cdg(build_cfg(art.instructions()), art.abi)
    cfg_path = FIXTURES / name / "config.txt"
    config = load_config(cfg_path) if cfg_path.is_file() else GenConfig()
    return art, cdg, config


@pytest.fixture
def auction():
    return fixture("auction")


@functools.lru_cache(maxsize=None)
def random_runs(name, n=40, seed=1):
    """Execute ``n`` random test cases on a fixture: list of (testcase, traces)."""
    import random

    from evmsbst.provider import EmbeddedProvider
    from evmsbst.testgen import Generator

    art, cdg, config = fixture(name)
    rng = random.Random(seed)
    gen = Generator.for_contract(art, cdg, config)
    provider = EmbeddedProvider(config, seed=seed)
    out = []
    for _ in range(n):
        tc = gen.test_case(rng)
        handle = provider.fresh(art)
        out.append((tc, [provider.execute(s, handle) for s in tc.statements]))
    return out


def assemble_labels(src):
    """Assemble with labels: ``name:`` places a JUMPDEST, ``@name`` pushes its offset (PUSH2)."""
    from evmsbst.asm import asm

    tokens = src.split()
    labels, pos, i = {}, 0, 0
    while i < len(tokens):
        t = tokens[i]
        if t.endswith(":"):
            labels[t[:-1]] = pos
            pos += 1
        elif t.startswith("@"):
            pos += 3
        elif t.upper().startswith("PUSH"):
            v = int(tokens[i + 1], 0)
            w = int(t[4:]) if t.upper() != "PUSH" else max(1, (v.bit_length() + 7) // 8)
            pos += 1 + w
            i += 1
        else:
            pos += 1
        i += 1
    out = []
    for t in tokens:
        if t.endswith(":"):
            out.append("JUMPDEST")
        elif t.startswith("@"):
            out.append(f"PUSH2 {labels[t[1:]]}")
        else:
            out.append(t)
    return asm(" ".join(out))


def one_method(body, name="f", payable=True):
    """A contract whose dispatcher routes selector ``name()`` to ``body``.

    Returns (instructions, abi).
    """
    from evmsbst.abi import parse_abi
    from evmsbst.asm import disassemble

    abi = parse_abi([{"type": "function", "name": name, "inputs": [],
                      "stateMutability": "payable" if payable else "nonpayable"}])
    sel = int.from_bytes(abi[0].selector, "big")
    src = (f"PUSH1 0 CALLDATALOAD PUSH1 0xe0 SHR PUSH4 {sel} EQ @body JUMPI "
           f"PUSH1 0 DUP1 REVERT body: {body}")
    return disassemble(assemble_labels(src)), abi
