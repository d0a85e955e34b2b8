"""Suite text, meta CSV and the bench statistics."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import astuple, fields
from typing import Any, Optional, Sequence

from .abi import AbiType, FunctionAbi
from .cdg import Cdg
from .fitness import Archive
from .search import RunReport
from .testgen import Constructor, FunctionCall, PassBlocks, PassTime, TestCase


class EmptySample(ValueError):
    pass


class SuiteSyntaxError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


# -- values ---------------------------------------------------------------------------

def format_value(t: AbiType, v: Any) -> str:
    if t.is_array:
        return "[" + ", ".join(format_value(t.element, x) for x in v) + "]"
    if t.base in ("uint", "int"):
        return str(v)
    if t.base == "bool":
        return "true" if v else "false"
    if t.base == "address":
        return "0x" + int(v).to_bytes(20, "big").hex()
    if t.base in ("fixedbytes", "bytes"):
        return "0x" + bytes(v).hex()
    if t.base == "string":
        return json.dumps(v)
    raise ValueError(f"cannot format {t}")


def _split_top(text: str) -> list[str]:
    """Split on commas outside brackets and string literals."""
    parts, depth, cur, quoted, escape = [], 0, [], False, False
    for ch in text:
        if quoted:
            cur.append(ch)
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                quoted = False
            continue
        if ch == '"':
            quoted = True
        elif ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
            continue
        cur.append(ch)
    tail = "".join(cur).strip()
    if tail or parts:
        parts.append(tail)
    return parts


def parse_value(t: AbiType, text: str) -> Any:
    text = text.strip()
    if t.is_array:
        if not (text.startswith("[") and text.endswith("]")):
            raise ValueError(f"expected array for {t}: {text}")
        return tuple(parse_value(t.element, p) for p in _split_top(text[1:-1]))
    if t.base in ("uint", "int"):
        return int(text, 0)
    if t.base == "bool":
        if text not in ("true", "false"):
            raise ValueError(f"expected bool: {text}")
        return text == "true"
    if t.base == "address":
        return int(text, 16)
    if t.base in ("fixedbytes", "bytes"):
        return bytes.fromhex(text.removeprefix("0x"))
    if t.base == "string":
        return json.loads(text)
    raise ValueError(f"cannot parse {t}")


def _args(fn: FunctionAbi, args: tuple) -> str:
    return ", ".join(format_value(t, v) for t, v in zip(fn.inputs, args))


def _addr(a: int) -> str:
    return "0x" + a.to_bytes(20, "big").hex()


def format_statement(s, constructor: Optional[FunctionAbi]) -> str:
    if isinstance(s, Constructor):
        ctor = constructor or FunctionAbi("constructor", is_constructor=True)
        if len(s.args) != len(ctor.inputs):
            raise ValueError("constructor arguments do not match the constructor ABI")
        return f"deploy({_args(ctor, s.args)}) from {_addr(s.sender)} value {s.value}"
    if isinstance(s, FunctionCall):
        return (f"call {s.function.name}({_args(s.function, s.args)}) "
                f"from {_addr(s.sender)} value {s.value}")
    if isinstance(s, PassTime):
        return f"pass_time {s.seconds}"
    if isinstance(s, PassBlocks):
        return f"pass_blocks {s.n}"
    raise TypeError(s)


# -- suite document -----------------------------------------------------------------

def emit_suite(archive: Archive, cdg: Optional[Cdg] = None, contract: str = "",
               constructor: Optional[FunctionAbi] = None, header: str = "") -> str:
    """Deduplicated, deterministically ordered suite text.

    Grammar (one item per line)::

        # comment
        test <n> covers <branch-id>[:<label>] ...
          deploy(<args>) from <0xaddress> value <wei>
          call <name>(<args>) from <0xaddress> value <wei>
          pass_time <seconds>
          pass_blocks <n>
        end
    """
    groups: dict[TestCase, list[int]] = {}
    for b in sorted(archive.covering):
        groups.setdefault(archive.covering[b], []).append(b)
    ordered = sorted(groups.items(), key=lambda kv: min(kv[1]))
    lines = [f"# suite for {contract}" if contract else "# suite"]
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    for n, (tc, branches) in enumerate(ordered, 1):
        labels = []
        for b in branches:
            if cdg is not None and b < len(cdg.branches):
                br = cdg.branches[b]
                labels.append(f"{b}:{br.method}@{br.jumpi_offset:#x}:{br.polarity}")
            else:
                labels.append(str(b))
        lines.append(f"test {n} covers {' '.join(labels)}")
        for s in tc.statements:
            lines.append("  " + format_statement(s, constructor))
        lines.append("end")
    return "\n".join(lines) + "\n"


def _parse_call_head(text: str, lineno: int) -> tuple[str, str, str]:
    """Split ``name(args) rest`` into (name, args, rest)."""
    open_at = text.find("(")
    if open_at < 0:
        raise SuiteSyntaxError(lineno, "expected '('")
    depth, quoted, escape = 0, False, False
    for i in range(open_at, len(text)):
        ch = text[i]
        if quoted:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                quoted = False
        elif ch == '"':
            quoted = True
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return text[:open_at].strip(), text[open_at + 1:i], text[i + 1:].strip()
    raise SuiteSyntaxError(lineno, "unbalanced parentheses")


def _parse_tx_tail(rest: str, lineno: int) -> tuple[int, int]:
    parts = rest.split()
    if len(parts) != 4 or parts[0] != "from" or parts[2] != "value":
        raise SuiteSyntaxError(lineno, "expected 'from <address> value <wei>'")
    return int(parts[1], 16), int(parts[3])


def parse_suite(text: str, abi: Sequence[FunctionAbi]) -> list[tuple[TestCase, list[int]]]:
    """Inverse of emit_suite: (test case, covered branch ids) per block."""
    ctor = next((f for f in abi if f.is_constructor),
                FunctionAbi("constructor", is_constructor=True))
    by_name: dict[str, list[FunctionAbi]] = {}
    for f in abi:
        if not f.is_constructor:
            by_name.setdefault(f.name if not f.is_fallback else "fallback", []).append(f)
    out = []
    current: Optional[list] = None
    covers: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("test "):
            if current is not None:
                raise SuiteSyntaxError(lineno, "nested test block")
            parts = line.split()
            if len(parts) < 3 or parts[2] != "covers":
                raise SuiteSyntaxError(lineno, "expected 'test <n> covers ...'")
            covers = [int(p.split(":", 1)[0]) for p in parts[3:]]
            current = []
        elif line == "end":
            if current is None:
                raise SuiteSyntaxError(lineno, "'end' outside a test block")
            out.append((TestCase(tuple(current)), covers))
            current = None
        elif current is None:
            raise SuiteSyntaxError(lineno, "statement outside a test block")
        elif line.startswith("deploy("):
            _, args, rest = _parse_call_head(line, lineno)
            sender, value = _parse_tx_tail(rest, lineno)
            vals = tuple(parse_value(t, a) for t, a in zip(ctor.inputs, _split_top(args)))
            current.append(Constructor(vals, value, sender))
        elif line.startswith("call "):
            name, args, rest = _parse_call_head(line[5:], lineno)
            sender, value = _parse_tx_tail(rest, lineno)
            pieces = _split_top(args)
            cands = [f for f in by_name.get(name, []) if len(f.inputs) == len(pieces)]
            if not cands:
                raise SuiteSyntaxError(lineno, f"no function {name} with {len(pieces)} arguments")
            fn = cands[0]
            vals = tuple(parse_value(t, a) for t, a in zip(fn.inputs, pieces))
            current.append(FunctionCall(fn, vals, value, sender))
        elif line.startswith("pass_time "):
            current.append(PassTime(int(line.split()[1])))
        elif line.startswith("pass_blocks "):
            current.append(PassBlocks(int(line.split()[1])))
        else:
            raise SuiteSyntaxError(lineno, f"unrecognised statement: {line}")
    if current is not None:
        raise SuiteSyntaxError(len(text.splitlines()), "unterminated test block")
    return out


# -- meta CSV -----------------------------------------------------------------------

META_COLUMNS = [f.name for f in fields(RunReport)]


def emit_meta_csv(reports: Sequence[RunReport]) -> str:
    if not reports:
        raise ValueError("at least one report is required")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(META_COLUMNS)
    for r in reports:
        w.writerow([repr(v) if isinstance(v, float) else v for v in astuple(r)])
    return buf.getvalue()


def parse_meta_csv(text: str) -> list[RunReport]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != META_COLUMNS:
        raise ValueError("unexpected meta CSV header")
    kinds = {f.name: f.type for f in fields(RunReport)}
    out = []
    for row in rows[1:]:
        vals = {}
        for name, cell in zip(META_COLUMNS, row):
            kind = kinds[name]
            vals[name] = int(cell) if kind == "int" else float(cell) if kind == "float" else cell
        out.append(RunReport(**vals))
    return out


# -- statistics ---------------------------------------------------------------------

def vargha_delaney_a12(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Probability that a draw from xs exceeds one from ys (ties count half)."""
    if not xs or not ys:
        raise EmptySample("both samples must be non-empty")
    wins = 0.0
    for x in xs:
        for y in ys:
            if x > y:
                wins += 1.0
            elif x == y:
                wins += 0.5
    return wins / (len(xs) * len(ys))


def effect_size_label(a12: float) -> str:
    m = max(a12, 1.0 - a12)
    if m >= 0.71:
        return "large"
    if m >= 0.64:
        return "medium"
    if m >= 0.56:
        return "small"
    return "negligible"


def _ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def wilcoxon_rank_sum(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Two-sided rank-sum (Mann-Whitney) p-value, tie-corrected normal
    approximation with continuity correction."""
    if not xs or not ys:
        raise EmptySample("both samples must be non-empty")
    n1, n2 = len(xs), len(ys)
    n = n1 + n2
    ranks = _ranks(list(xs) + list(ys))
    u1 = sum(ranks[:n1]) - n1 * (n1 + 1) / 2.0
    u = max(u1, n1 * n2 - u1)
    mu = n1 * n2 / 2.0
    counts: dict = {}
    for v in list(xs) + list(ys):
        counts[v] = counts.get(v, 0) + 1
    tie = sum(t ** 3 - t for t in counts.values())
    var = n1 * n2 / 12.0 * ((n + 1) - tie / (n * (n - 1)))
    if var <= 0:
        return 1.0
    z = (u - mu - 0.5) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2.0)))
