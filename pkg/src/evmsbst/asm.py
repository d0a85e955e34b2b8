"""Disassembly of EVM bytecode and loading of hex bytecode files."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Optional

from .opcodes import INVALID, MNEMONICS, OPCODES, is_push, push_size


class TruncatedPush(ValueError):
    """A PUSH payload runs past the end of the code."""

    def __init__(self, offset: int, needed: int, available: int):
        super().__init__(
            f"PUSH at offset {offset} needs {needed} payload bytes, {available} available"
        )
        self.offset = offset


@dataclass(frozen=True)
class Instruction:
    offset: int
    opcode: int
    mnemonic: str
    push_payload: Optional[int] = None

    @property
    def size(self) -> int:
        return 1 + push_size(self.opcode)

    @property
    def next_offset(self) -> int:
        return self.offset + self.size

    def encode(self) -> bytes:
        n = push_size(self.opcode)
        if n:
            return bytes([self.opcode]) + self.push_payload.to_bytes(n, "big")
        return bytes([self.opcode])

    def __str__(self) -> str:
        if self.push_payload is not None:
            return f"{self.offset:#06x} {self.mnemonic} {self.push_payload:#x}"
        return f"{self.offset:#06x} {self.mnemonic}"


def disassemble(code: bytes) -> list[Instruction]:
    """Decode ``code`` into instructions.

    Bytes that are not assigned opcodes decode as one-byte ``INVALID``
    instructions (keeping their original byte so that re-encoding is exact).
    """
    if not code:
        raise ValueError("cannot disassemble empty code")
    out = []
    pc = 0
    n = len(code)
    while pc < n:
        op = code[pc]
        size = push_size(op)
        if size:
            if pc + 1 + size > n:
                raise TruncatedPush(pc, size, n - pc - 1)
            payload = int.from_bytes(code[pc + 1 : pc + 1 + size], "big")
            out.append(Instruction(pc, op, OPCODES[op], payload))
        else:
            out.append(Instruction(pc, op, OPCODES.get(op, "INVALID")))
        pc += 1 + size
    return out


def disassemble_lenient(code: bytes) -> list[Instruction]:
    """Like :func:`disassemble` but zero-pads a truncated trailing PUSH.

    Compiler output ends with a metadata blob that may cut a PUSH short;
    the EVM reads missing bytes as zero.
    """
    try:
        return disassemble(code)
    except TruncatedPush as exc:
        head = disassemble(code[: exc.offset]) if exc.offset else []
        op = code[exc.offset]
        size = push_size(op)
        raw = code[exc.offset + 1 :].ljust(size, b"\x00")
        head.append(Instruction(exc.offset, op, OPCODES[op], int.from_bytes(raw, "big")))
        return head


def assemble(instructions: Iterable[Instruction]) -> bytes:
    return b"".join(ins.encode() for ins in instructions)


def is_invalid(ins: Instruction) -> bool:
    return ins.mnemonic == "INVALID" or ins.opcode == INVALID


def parse_hex(text: str) -> bytes:
    """Bytecode from hex text: optional 0x prefix, whitespace ignored."""
    cleaned = re.sub(r"\s+", "", text)
    if cleaned[:2] in ("0x", "0X"):
        cleaned = cleaned[2:]
    return bytes.fromhex(cleaned)


def asm(source: str) -> bytes:
    """Tiny assembler used by tests and examples.

    Accepts whitespace/newline/semicolon separated mnemonics; ``PUSHn`` takes
    a following integer literal.  ``PUSH`` without a width picks the smallest
    width that fits.
    """
    tokens = [t for t in re.split(r"[\s;]+", source) if t]
    out = bytearray()
    i = 0
    while i < len(tokens):
        tok = tokens[i].upper()
        if tok.startswith("PUSH"):
            value = int(tokens[i + 1], 0)
            width = int(tok[4:]) if tok != "PUSH" else max(1, (value.bit_length() + 7) // 8)
            out.append(MNEMONICS[f"PUSH{width}"])
            out += value.to_bytes(width, "big")
            i += 2
            continue
        out.append(MNEMONICS[tok])
        i += 1
    return bytes(out)


__all__ = [
    "Instruction",
    "TruncatedPush",
    "assemble",
    "asm",
    "disassemble",
    "disassemble_lenient",
    "is_push",
    "parse_hex",
]
