"""Contract artifacts and constant scraping for seeding."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .abi import FunctionAbi, parse_abi
from .asm import Instruction, disassemble_lenient, parse_hex

UINT_MAX = (1 << 256) - 1


@dataclass
class ConstantPools:
    unsigned: list[int] = field(default_factory=list)
    signed: list[int] = field(default_factory=list)
    addresses: list[int] = field(default_factory=list)
    byte_strings: list[bytes] = field(default_factory=list)
    booleans: list[bool] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.unsigned or self.signed or self.addresses
                    or self.byte_strings or self.booleans)

    @classmethod
    def empty(cls) -> "ConstantPools":
        return cls()


def _to_signed(value: int) -> int:
    return value - (1 << 256) if value >> 255 else value


def strip_metadata(code: bytes) -> bytes:
    """Drop the trailing CBOR metadata blob solc appends to runtime code.

    The last two bytes give the blob length; the blob starts with a CBOR map
    header (0xa1..0xa5).  Code without a recognisable blob is returned as is.
    """
    if len(code) < 2:
        return code
    n = int.from_bytes(code[-2:], "big")
    start = len(code) - 2 - n
    if n and start > 0 and 0xA1 <= code[start] <= 0xA5:
        return code[:start]
    return code


def scrape_constants(code: bytes, abi: Sequence[FunctionAbi] = ()) -> ConstantPools:
    """Collect PUSH payloads into per-type pools.

    Every payload lands in the unsigned pool; 20-byte payloads are also
    entered as addresses since bytecode carries no types.  The ABI is
    accepted for interface symmetry; compiler ABIs carry no default values.
    """
    del abi
    pools = ConstantPools()
    seen_u, seen_s, seen_a, seen_b, seen_bool = set(), set(), set(), set(), set()
    for ins in disassemble_lenient(code):
        if ins.push_payload is None:
            continue
        v = ins.push_payload
        raw = v.to_bytes(ins.size - 1, "big")
        if v not in seen_u:
            seen_u.add(v)
            pools.unsigned.append(v)
        s = _to_signed(v) if ins.size - 1 == 32 else v
        if s not in seen_s:
            seen_s.add(s)
            pools.signed.append(s)
        if ins.size - 1 == 20 and v not in seen_a:
            seen_a.add(v)
            pools.addresses.append(v)
        if raw not in seen_b:
            seen_b.add(raw)
            pools.byte_strings.append(raw)
        if v in (0, 1) and v not in seen_bool:
            seen_bool.add(v)
            pools.booleans.append(bool(v))
    return pools


@dataclass
class ContractArtifact:
    name: str
    runtime_bytecode: bytes
    abi: list[FunctionAbi]
    deploy_bytecode: Optional[bytes] = None
    pools: ConstantPools = field(default_factory=ConstantPools)

    def __post_init__(self):
        if not self.runtime_bytecode:
            raise ValueError("runtime bytecode must be non-empty")
        if sum(f.is_constructor for f in self.abi) > 1:
            raise ValueError("at most one constructor")
        if sum(f.is_fallback for f in self.abi) > 1:
            raise ValueError("at most one fallback")

    @property
    def code(self) -> bytes:
        """Runtime code without the metadata trailer."""
        return strip_metadata(self.runtime_bytecode)

    @property
    def constructor(self) -> Optional[FunctionAbi]:
        return next((f for f in self.abi if f.is_constructor), None)

    @property
    def fallback(self) -> Optional[FunctionAbi]:
        return next((f for f in self.abi if f.is_fallback), None)

    @property
    def functions(self) -> list[FunctionAbi]:
        return [f for f in self.abi if not f.is_constructor]

    def instructions(self) -> list[Instruction]:
        return disassemble_lenient(self.code)


def load_artifact(runtime_path, abi_path, deploy_path=None, name=None) -> ContractArtifact:
    runtime_path = Path(runtime_path)
    abi_path = Path(abi_path)
    runtime = parse_hex(runtime_path.read_text())
    abi = parse_abi(json.loads(abi_path.read_text()))
    deploy = parse_hex(Path(deploy_path).read_text()) if deploy_path else None
    if name is None:
        name = abi_path.stem if abi_path.stem != "abi" else abi_path.resolve().parent.name
    pools = scrape_constants(strip_metadata(runtime), abi)
    return ContractArtifact(name, runtime, abi, deploy, pools)


def load_fixture(directory) -> ContractArtifact:
    d = Path(directory)
    deploy = d / "deploy.hex"
    return load_artifact(d / "runtime.hex", d / "abi.json",
                         deploy if deploy.exists() else None, name=d.name)
