"""ABI descriptors: parsing, selectors and calldata encoding."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

from Crypto.Hash import keccak


class MalformedAbi(ValueError):
    def __init__(self, index: int, reason: str):
        super().__init__(f"ABI entry {index}: {reason}")
        self.index = index


class UnsupportedType(ValueError):
    pass


def keccak256(data: bytes) -> bytes:
    h = keccak.new(digest_bits=256)
    h.update(data)
    return h.digest()


def compute_selector(signature: str) -> bytes:
    """First four bytes of keccak-256 over the canonical signature."""
    return keccak256(signature.encode())[:4]


@dataclass(frozen=True)
class AbiType:
    """A parsed ABI type.

    ``base`` is one of uint, int, bool, address, fixedbytes, bytes, string;
    ``bits`` carries the width for uint/int and the byte length for
    fixedbytes.  Arrays nest through ``element`` with ``length`` None for
    dynamic arrays.
    """

    base: str
    bits: int = 0
    element: Optional["AbiType"] = None
    length: Optional[int] = None

    @property
    def is_array(self) -> bool:
        return self.base == "array"

    @property
    def is_dynamic(self) -> bool:
        if self.base in ("bytes", "string"):
            return True
        if self.is_array:
            return self.length is None or self.element.is_dynamic
        return False

    def head_size(self) -> int:
        if self.is_array and not self.is_dynamic:
            return self.length * self.element.head_size()
        return 32

    def canonical(self) -> str:
        if self.is_array:
            suffix = "[]" if self.length is None else f"[{self.length}]"
            return self.element.canonical() + suffix
        if self.base in ("uint", "int"):
            return f"{self.base}{self.bits}"
        if self.base == "fixedbytes":
            return f"bytes{self.bits}"
        return self.base

    def __str__(self) -> str:
        return self.canonical()


_ARRAY_RE = re.compile(r"^(.*)\[(\d*)\]$")


def parse_type(text: str) -> AbiType:
    text = text.strip()
    m = _ARRAY_RE.match(text)
    if m:
        inner, size = m.groups()
        if size and int(size) == 0:
            raise UnsupportedType(f"zero-length array: {text}")
        return AbiType("array", element=parse_type(inner), length=int(size) if size else None)
    if text in ("bool", "address", "string", "bytes"):
        return AbiType(text)
    if text in ("uint", "int"):
        return AbiType(text, 256)
    for base in ("uint", "int"):
        if text.startswith(base) and text[len(base):].isdigit():
            bits = int(text[len(base):])
            if bits % 8 or not 8 <= bits <= 256:
                raise UnsupportedType(f"invalid integer width: {text}")
            return AbiType(base, bits)
    if text.startswith("bytes") and text[5:].isdigit():
        n = int(text[5:])
        if not 1 <= n <= 32:
            raise UnsupportedType(f"invalid fixed bytes length: {text}")
        return AbiType("fixedbytes", n)
    raise UnsupportedType(f"unsupported ABI type: {text}")


@dataclass(frozen=True)
class FunctionAbi:
    name: str
    inputs: tuple[AbiType, ...] = ()
    payable: bool = False
    is_constructor: bool = False
    is_fallback: bool = False
    constant: bool = False
    input_names: tuple[str, ...] = field(default=(), compare=False)

    @property
    def signature(self) -> str:
        return f"{self.name}({','.join(t.canonical() for t in self.inputs)})"

    @property
    def selector(self) -> Optional[bytes]:
        if self.is_constructor or self.is_fallback:
            return None
        return compute_selector(self.signature)

    def __str__(self) -> str:
        if self.is_constructor:
            return "constructor"
        if self.is_fallback:
            return "fallback"
        return self.signature


def _payable(entry: dict) -> bool:
    if "stateMutability" in entry:
        return entry["stateMutability"] == "payable"
    return bool(entry.get("payable", False))


def _constant(entry: dict) -> bool:
    if "stateMutability" in entry:
        return entry["stateMutability"] in ("view", "pure")
    return bool(entry.get("constant", False))


def parse_abi(document: Any) -> list[FunctionAbi]:
    """Parse a compiler-emitted ABI document (JSON text or already-decoded list).

    Events and errors are skipped; function, constructor, fallback and
    receive entries are represented.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise MalformedAbi(-1, f"not JSON: {exc}") from None
    if not isinstance(document, list):
        raise MalformedAbi(-1, "top level must be a list")
    out = []
    ctor = fallback = 0
    for i, entry in enumerate(document):
        if not isinstance(entry, dict):
            raise MalformedAbi(i, "entry is not an object")
        kind = entry.get("type", "function")
        if kind in ("event", "error"):
            continue
        if kind not in ("function", "constructor", "fallback", "receive"):
            raise MalformedAbi(i, f"unknown kind {kind!r}")
        try:
            inputs = tuple(parse_type(p["type"]) for p in entry.get("inputs", []))
        except (UnsupportedType, KeyError, TypeError) as exc:
            raise MalformedAbi(i, str(exc)) from None
        names = tuple(p.get("name", "") for p in entry.get("inputs", []))
        if kind == "constructor":
            ctor += 1
            out.append(FunctionAbi("constructor", inputs, _payable(entry), is_constructor=True,
                                   input_names=names))
        elif kind in ("fallback", "receive"):
            fallback += 1
            out.append(FunctionAbi(kind, (), _payable(entry), is_fallback=True))
        else:
            if "name" not in entry:
                raise MalformedAbi(i, "function without a name")
            out.append(FunctionAbi(entry["name"], inputs, _payable(entry),
                                   constant=_constant(entry), input_names=names))
    if ctor > 1:
        raise MalformedAbi(-1, "more than one constructor")
    if fallback > 1:
        raise MalformedAbi(-1, "more than one fallback")
    return out


# -- encoding ---------------------------------------------------------------

def _encode_static(t: AbiType, value: Any) -> bytes:
    if t.base == "uint":
        if not 0 <= value < 1 << t.bits:
            raise ValueError(f"{value} out of range for {t}")
        return value.to_bytes(32, "big")
    if t.base == "int":
        if not -(1 << (t.bits - 1)) <= value < 1 << (t.bits - 1):
            raise ValueError(f"{value} out of range for {t}")
        return (value % (1 << 256)).to_bytes(32, "big")
    if t.base == "bool":
        return (1 if value else 0).to_bytes(32, "big")
    if t.base == "address":
        return int(value).to_bytes(32, "big")
    if t.base == "fixedbytes":
        if len(value) != t.bits:
            raise ValueError(f"{t} needs {t.bits} bytes, got {len(value)}")
        return bytes(value).ljust(32, b"\x00")
    raise AssertionError(t)


def _pad32(data: bytes) -> bytes:
    return data + b"\x00" * (-len(data) % 32)


def encode_value(t: AbiType, value: Any) -> bytes:
    if t.base in ("bytes", "string"):
        raw = value.encode() if isinstance(value, str) else bytes(value)
        return len(raw).to_bytes(32, "big") + _pad32(raw)
    if t.is_array:
        items = list(value)
        if t.length is not None and len(items) != t.length:
            raise ValueError(f"{t} needs {t.length} items, got {len(items)}")
        body = encode_sequence([t.element] * len(items), items)
        if t.length is None:
            return len(items).to_bytes(32, "big") + body
        return body
    return _encode_static(t, value)


def encode_sequence(types: Sequence[AbiType], values: Sequence[Any]) -> bytes:
    """Head/tail encoding of a list of values."""
    if len(types) != len(values):
        raise ValueError(f"expected {len(types)} values, got {len(values)}")
    head_len = sum(t.head_size() for t in types)
    heads, tails = [], []
    tail_len = 0
    for t, v in zip(types, values):
        if t.is_dynamic:
            heads.append((head_len + tail_len).to_bytes(32, "big"))
            enc = encode_value(t, v)
            tails.append(enc)
            tail_len += len(enc)
        else:
            heads.append(encode_value(t, v))
    return b"".join(heads) + b"".join(tails)


def encode_call(function: FunctionAbi, args: Sequence[Any]) -> bytes:
    if function.is_fallback:
        return b""
    body = encode_sequence(function.inputs, args)
    if function.is_constructor:
        return body
    return function.selector + body
