"""Test-case model, random initialisation with seeding, crossover and mutation."""
from __future__ import annotations

import random
import string
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Sequence, Union

from .abi import AbiType, FunctionAbi, UnsupportedType, keccak256
from .artifact import ConstantPools

ETHER = 10 ** 18


@dataclass(frozen=True)
class Constructor:
    args: tuple = ()
    value: int = 0
    sender: int = 0


@dataclass(frozen=True)
class FunctionCall:
    function: FunctionAbi
    args: tuple = ()
    value: int = 0
    sender: int = 0


@dataclass(frozen=True)
class PassBlocks:
    n: int


@dataclass(frozen=True)
class PassTime:
    seconds: int


Statement = Union[Constructor, FunctionCall, PassBlocks, PassTime]


@dataclass(frozen=True)
class TestCase:
    """A constructor statement followed by calls and chain manipulations."""

    __test__ = False  # not a pytest class
    statements: tuple

    def __post_init__(self):
        st = self.statements
        if len(st) < 2:
            raise ValueError("a test case holds a constructor and at least one statement")
        if not isinstance(st[0], Constructor):
            raise ValueError("first statement must be the constructor")
        if any(isinstance(s, Constructor) for s in st[1:]):
            raise ValueError("only the first statement may be a constructor")

    @property
    def length(self) -> int:
        return len(self.statements)

    def __len__(self) -> int:
        return len(self.statements)


def derived_address(label: str, i: int) -> int:
    return int.from_bytes(keccak256(f"{label}:{i}".encode())[12:], "big")


def default_accounts(n: int = 5) -> tuple:
    return tuple(derived_address("account", i) for i in range(n))


def default_nonexistent(n: int = 2) -> tuple:
    return tuple(derived_address("ghost", i) for i in range(n))


@dataclass(frozen=True)
class GenConfig:
    population_size: int = 50
    max_generations: int = 100
    max_statements: int = 10
    min_value: int = 0
    max_value: int = ETHER
    accounts: tuple = field(default_factory=default_accounts)
    account_balance: int = 100 * ETHER
    account_balances: tuple = ()
    nonexistent_accounts: tuple = field(default_factory=default_nonexistent)
    include_zero_address: bool = True
    seeding_probability: float = 0.5
    crossover_probability: float = 0.75
    mutation_probability: float = 1.0
    tournament_size: int = 10
    rng_seed: int = 0
    pass_time: bool = False
    pass_blocks: bool = False
    min_pass_time: int = 1
    max_pass_time: int = 2 * 86400
    min_pass_blocks: int = 1
    max_pass_blocks: int = 50
    gas_budget: int = 2_000_000
    block_gas_limit: int = 8_000_000
    max_array_length: int = 4
    max_bytes_length: int = 32
    excluded_branches: tuple = ()

    def __post_init__(self):
        for name in ("seeding_probability", "crossover_probability", "mutation_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if not self.accounts:
            raise ValueError("accounts must be non-empty")
        if self.max_statements < 2:
            raise ValueError("max_statements must be at least 2")
        if self.min_value > self.max_value or self.min_value < 0:
            raise ValueError("value range is empty or negative")
        if self.account_balances and len(self.account_balances) != len(self.accounts):
            raise ValueError("account_balances must align with accounts")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be positive")
        if self.min_pass_time < 1 or self.min_pass_blocks < 1:
            raise ValueError("pass ranges must start at 1 or above")

    def address_choices(self) -> tuple:
        extra = (0,) if self.include_zero_address else ()
        return tuple(self.accounts) + tuple(self.nonexistent_accounts) + extra

    def balances(self) -> dict:
        if self.account_balances:
            return dict(zip(self.accounts, self.account_balances))
        return {a: self.account_balance for a in self.accounts}

    def with_overrides(self, **kw) -> "GenConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _parse_field(name: str, kind: Any, text: str) -> Any:
    text = text.strip()
    if name in ("accounts", "nonexistent_accounts"):
        return tuple(int(t, 16) for t in text.replace(",", " ").split())
    if name in ("excluded_branches", "account_balances"):
        return tuple(int(t, 0) for t in text.replace(",", " ").split())
    if kind in (bool, "bool"):
        low = text.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ValueError(f"{name}: not a boolean: {text}")
    if kind in (float, "float"):
        return float(text)
    return int(text.replace("_", ""), 0)


_FIELD_KINDS = {f.name: f.type for f in fields(GenConfig)}


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment.  Returns overrides."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _FIELD_KINDS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        out[key] = _parse_field(key, _FIELD_KINDS[key], value)
    return out


def load_config(path, base: Optional[GenConfig] = None, **overrides) -> GenConfig:
    cfg = base or GenConfig()
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return replace(cfg, **values)


# -- random values ------------------------------------------------------------------

def _seed_pool(t: AbiType, pools: ConstantPools) -> list:
    if t.base == "uint":
        return [v for v in pools.unsigned if v < 1 << t.bits]
    if t.base == "int":
        lo, hi = -(1 << (t.bits - 1)), 1 << (t.bits - 1)
        return [v for v in pools.signed if lo <= v < hi]
    if t.base == "bool":
        return list(pools.booleans)
    if t.base == "address":
        return list(pools.addresses)
    if t.base == "fixedbytes":
        return [b for b in pools.byte_strings if len(b) == t.bits]
    if t.base == "bytes":
        return list(pools.byte_strings)
    return []


def random_value(t: AbiType, pools: ConstantPools, config: GenConfig, rng: random.Random) -> Any:
    """Draw a value of type ``t``; pooled constants are used with the seeding probability."""
    if t.is_array:
        n = t.length if t.length is not None else rng.randint(0, config.max_array_length)
        return tuple(random_value(t.element, pools, config, rng) for _ in range(n))
    if t.base not in ("uint", "int", "bool", "address", "fixedbytes", "bytes", "string"):
        raise UnsupportedType(f"cannot generate values of type {t}")
    pool = _seed_pool(t, pools)
    if pool and rng.random() < config.seeding_probability:
        return rng.choice(pool)
    if t.base == "uint":
        return rng.getrandbits(t.bits)
    if t.base == "int":
        return rng.getrandbits(t.bits) - (1 << (t.bits - 1))
    if t.base == "bool":
        return rng.random() < 0.5
    if t.base == "address":
        return rng.choice(config.address_choices())
    if t.base == "fixedbytes":
        return rng.getrandbits(8 * t.bits).to_bytes(t.bits, "big")
    n = rng.randint(0, config.max_bytes_length)
    if t.base == "string":
        return "".join(rng.choice(string.ascii_letters + string.digits) for _ in range(n))
    return rng.getrandbits(8 * n).to_bytes(n, "big") if n else b""


def random_ether(payable: bool, pools: ConstantPools, config: GenConfig,
                 rng: random.Random) -> int:
    if not payable:
        return 0
    pool = [v for v in pools.unsigned if config.min_value <= v <= config.max_value]
    if pool and rng.random() < config.seeding_probability:
        return rng.choice(pool)
    return rng.randint(config.min_value, config.max_value)


def random_sender(config: GenConfig, rng: random.Random) -> int:
    return rng.choice(config.accounts)


def random_args(fn: FunctionAbi, pools: ConstantPools, config: GenConfig,
                rng: random.Random) -> tuple:
    return tuple(random_value(t, pools, config, rng) for t in fn.inputs)


class Generator:
    """Bundles what random statement creation needs about the contract."""

    def __init__(self, constructor: Optional[FunctionAbi], functions: Sequence[FunctionAbi],
                 pools: ConstantPools, config: GenConfig):
        self.constructor = constructor or FunctionAbi("constructor", is_constructor=True)
        self.functions = list(functions)
        self.pools = pools
        self.config = config
        self.kinds: list = [("call", f) for f in self.functions]
        if config.pass_time:
            self.kinds.append(("time", None))
        if config.pass_blocks:
            self.kinds.append(("blocks", None))
        if not self.kinds:
            raise ValueError("nothing to call: no functions and chain statements disabled")

    @classmethod
    def for_contract(cls, artifact, cdg, config: GenConfig) -> "Generator":
        functions = cdg.callable_functions() if cdg is not None else artifact.functions
        if not functions:
            functions = [f for f in artifact.functions]
        return cls(artifact.constructor, functions, artifact.pools, config)

    def constructor_statement(self, rng: random.Random) -> Constructor:
        c = self.constructor
        return Constructor(random_args(c, self.pools, self.config, rng),
                           random_ether(c.payable, self.pools, self.config, rng),
                           random_sender(self.config, rng))

    def statement(self, rng: random.Random) -> Statement:
        kind, fn = rng.choice(self.kinds)
        cfg = self.config
        if kind == "time":
            return PassTime(rng.randint(cfg.min_pass_time, cfg.max_pass_time))
        if kind == "blocks":
            return PassBlocks(rng.randint(cfg.min_pass_blocks, cfg.max_pass_blocks))
        return FunctionCall(fn, random_args(fn, self.pools, cfg, rng),
                            random_ether(fn.payable, self.pools, cfg, rng),
                            random_sender(cfg, rng))

    def test_case(self, rng: random.Random) -> TestCase:
        n = rng.randint(1, self.config.max_statements - 1)
        return TestCase((self.constructor_statement(rng),)
                        + tuple(self.statement(rng) for _ in range(n)))

    def change(self, s: Statement, rng: random.Random) -> Statement:
        """Re-roll one of argument, sender or value of ``s``."""
        cfg = self.config
        if isinstance(s, PassTime):
            return PassTime(rng.randint(cfg.min_pass_time, cfg.max_pass_time))
        if isinstance(s, PassBlocks):
            return PassBlocks(rng.randint(cfg.min_pass_blocks, cfg.max_pass_blocks))
        fn = self.constructor if isinstance(s, Constructor) else s.function
        options = ["sender"]
        if fn.inputs:
            options.append("arg")
        if fn.payable:
            options.append("value")
        what = rng.choice(options)
        if what == "sender":
            return replace(s, sender=random_sender(cfg, rng))
        if what == "value":
            return replace(s, value=random_ether(True, self.pools, cfg, rng))
        i = rng.randrange(len(fn.inputs))
        args = list(s.args)
        args[i] = random_value(fn.inputs[i], self.pools, cfg, rng)
        return replace(s, args=tuple(args))


def random_test_case(artifact, cdg, config: GenConfig, rng: random.Random) -> TestCase:
    return Generator.for_contract(artifact, cdg, config).test_case(rng)


def crossover(p1: TestCase, p2: TestCase, rng: random.Random,
              max_statements: int) -> tuple[TestCase, TestCase]:
    """Single-point crossover with an independent cut in each parent.

    Cuts fall strictly after the constructor and leave a non-empty tail,
    so both children keep the constructor and at least one statement.
    """
    if p1 == p2:
        return p1, p2
    i = rng.randint(1, len(p1) - 1)
    j = rng.randint(1, len(p2) - 1)
    a, b = p1.statements, p2.statements
    c1 = (a[:i] + b[j:])[:max_statements]
    c2 = (b[:j] + a[i:])[:max_statements]
    return TestCase(c1), TestCase(c2)


def mutate(t: TestCase, gen: Generator, rng: random.Random) -> TestCase:
    """Remove, change and insert, each with probability 1/length per position.

    If no operator fires, one change is applied so the result differs in
    intent from its parent.
    """
    cfg = gen.config
    st = list(t.statements)
    p = 1.0 / len(st)
    changed = False
    # remove
    i = 1
    while i < len(st):
        if len(st) > 2 and rng.random() < p:
            del st[i]
            changed = True
        else:
            i += 1
    # change
    for i in range(len(st)):
        if rng.random() < p:
            st[i] = gen.change(st[i], rng)
            changed = True
    # insert
    i = 1
    while i <= len(st):
        if len(st) < cfg.max_statements and rng.random() < p:
            st.insert(i, gen.statement(rng))
            changed = True
            i += 1
        i += 1
    if not changed:
        i = rng.randrange(len(st))
        st[i] = gen.change(st[i], rng)
    return TestCase(tuple(st))
