"""Embedded EVM-subset interpreter and simulated chain.

Gas is one unit per executed instruction.  Only the contract under test
(call depth 0) contributes to the recorded trace; a single nested level of
CALL into another contract is executed but not traced.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .abi import keccak256

WORD = 1 << 256
MASK = WORD - 1
SIGN = 1 << 255
ADDRESS_MASK = (1 << 160) - 1

DEFAULT_GAS_BUDGET = 2_000_000
DEFAULT_BLOCK_GAS_LIMIT = 8_000_000
GENESIS_TIMESTAMP = 1_700_000_000
GENESIS_BLOCK = 1
MEMORY_LIMIT = 1 << 20
STACK_LIMIT = 1024
CALL_STIPEND = 2300
CHAIN_ID = 1337

SUCCESS = "success"
REVERTED = "reverted"
OUT_OF_GAS = "out_of_gas"
INVALID_OP = "invalid_op"

# Operands of these are recorded at each execution.
OBSERVED = {0x10: "LT", 0x11: "GT", 0x12: "SLT", 0x13: "SGT", 0x14: "EQ", 0x15: "ISZERO"}


class ChainError(Exception):
    pass


class InsufficientBalance(ChainError):
    pass


class NonPositiveAdvance(ChainError):
    pass


class UnknownAccount(ChainError):
    pass


class ExecutionFailed(ChainError):
    """Base for failed transactions raised through ``raise_for_status``."""

    def __init__(self, message: str, trace: "ExecutionTrace"):
        super().__init__(message)
        self.trace = trace


class Reverted(ExecutionFailed):
    pass


class DeployReverted(Reverted):
    pass


class OutOfGas(ExecutionFailed):
    pass


class InvalidOpcode(ExecutionFailed):
    pass


class ProviderUnavailable(ChainError):
    pass


# internal halting signals
class _Halt(Exception):
    status = INVALID_OP


class _Revert(_Halt):
    status = REVERTED

    def __init__(self, data: bytes = b"", reason: str = "revert"):
        super().__init__(reason)
        self.data = data


class _OutOfGas(_Halt):
    status = OUT_OF_GAS


class _Invalid(_Halt):
    status = INVALID_OP


class StackUnderflow(_Invalid):
    pass


class BadJumpDestination(_Revert):
    def __init__(self, dest: int):
        super().__init__(b"", f"bad jump destination {dest:#x}")


# -- state --------------------------------------------------------------------

@dataclass
class Account:
    balance: int = 0
    code: bytes = b""
    storage: dict = field(default_factory=dict)
    nonce: int = 0

    def clone(self) -> "Account":
        return Account(self.balance, self.code, dict(self.storage), self.nonce)


@dataclass
class ChainState:
    accounts: dict = field(default_factory=dict)
    block_number: int = GENESIS_BLOCK
    timestamp: int = GENESIS_TIMESTAMP
    block_gas_limit: int = DEFAULT_BLOCK_GAS_LIMIT
    seed: int = 0
    tx_count: int = 0

    @classmethod
    def genesis(cls, balances: dict, seed: int = 0,
                block_gas_limit: int = DEFAULT_BLOCK_GAS_LIMIT) -> "ChainState":
        return cls({a: Account(b) for a, b in balances.items()}, seed=seed,
                   block_gas_limit=block_gas_limit)

    def clone(self) -> "ChainState":
        return ChainState({a: acc.clone() for a, acc in self.accounts.items()},
                          self.block_number, self.timestamp, self.block_gas_limit,
                          self.seed, self.tx_count)

    def balance(self, address: int) -> int:
        acc = self.accounts.get(address)
        return acc.balance if acc else 0

    def storage_at(self, address: int, key: int) -> int:
        acc = self.accounts.get(address)
        return acc.storage.get(key, 0) if acc else 0

    def total_balance(self) -> int:
        return sum(a.balance for a in self.accounts.values())

    def blockhash(self, number: int) -> int:
        if not self.block_number - 256 <= number < self.block_number:
            return 0
        return int.from_bytes(keccak256(b"blockhash" + self.seed.to_bytes(32, "big")
                                        + number.to_bytes(32, "big")), "big")


@dataclass(frozen=True)
class Transaction:
    sender: int
    to: Optional[int]
    value: int = 0
    data: bytes = b""
    gas_budget: int = DEFAULT_GAS_BUDGET


@dataclass(frozen=True)
class PredicateObservation:
    comparison_offset: int
    a: int
    b: int
    step: int


@dataclass(frozen=True)
class Receipt:
    tx_id: int
    created_address: Optional[int] = None


@dataclass
class ExecutionTrace:
    executed_offsets: list = field(default_factory=list)
    predicate_observations: list = field(default_factory=list)
    status: str = SUCCESS
    return_data: bytes = b""
    receipt: Optional[Receipt] = None
    error: Optional[str] = None
    logs: list = field(default_factory=list)
    gas_used: int = 0

    @property
    def succeeded(self) -> bool:
        return self.status == SUCCESS

    def raise_for_status(self, deploy: bool = False) -> "ExecutionTrace":
        if self.status == SUCCESS:
            return self
        msg = self.error or self.status
        if self.status == OUT_OF_GAS:
            raise OutOfGas(msg, self)
        if self.status == INVALID_OP:
            raise InvalidOpcode(msg, self)
        raise (DeployReverted if deploy else Reverted)(msg, self)


def create_address(deployer: int, nonce: int) -> int:
    """Deterministic creation address: hash of (deployer, nonce) truncated to 20 bytes."""
    return int.from_bytes(keccak256(deployer.to_bytes(20, "big") + nonce.to_bytes(32, "big"))[12:],
                          "big")


def valid_jumpdests(code: bytes) -> frozenset:
    dests = set()
    i = 0
    n = len(code)
    while i < n:
        op = code[i]
        if op == 0x5B:
            dests.add(i)
        i += op - 0x5E if 0x60 <= op <= 0x7F else 1
    return frozenset(dests)


_JUMPDEST_CACHE: dict = {}


def _jumpdests(code: bytes) -> frozenset:
    got = _JUMPDEST_CACHE.get(code)
    if got is None:
        got = _JUMPDEST_CACHE[code] = valid_jumpdests(code)
    return got


# -- interpreter ----------------------------------------------------------------

def _signed(x: int) -> int:
    return x - WORD if x & SIGN else x


StructLogHook = Callable[[int, str, list, int], None]


@dataclass
class Frame:
    """Machine state of one message call."""

    code: bytes
    address: int
    caller: int
    origin: int
    value: int
    calldata: bytes
    depth: int
    jumpdests: frozenset
    pc: int = 0
    stack: list = field(default_factory=list)
    memory: bytearray = field(default_factory=bytearray)
    returndata: bytes = b""
    output: bytes = b""
    halted: bool = False
    offsets: Optional[list] = None
    observations: Optional[list] = None


class Vm:
    """Runs frames against a ChainState with a shared flat gas counter."""

    def __init__(self, state: ChainState, gas: int, hook: Optional[StructLogHook] = None):
        self.state = state
        self.gas = gas
        self.hook = hook
        self.logs: list = []
        self.destroyed: list = []

    # memory helpers
    def _touch(self, f: Frame, start: int, size: int) -> None:
        if size == 0:
            return
        end = start + size
        if end > MEMORY_LIMIT:
            raise _OutOfGas("memory expansion beyond limit")
        if end > len(f.memory):
            f.memory.extend(b"\x00" * ((end + 31) // 32 * 32 - len(f.memory)))

    def _mread(self, f: Frame, start: int, size: int) -> bytes:
        if size == 0:
            return b""
        self._touch(f, start, size)
        return bytes(f.memory[start:start + size])

    def _mwrite(self, f: Frame, start: int, data: bytes) -> None:
        if not data:
            return
        self._touch(f, start, len(data))
        f.memory[start:start + len(data)] = data

    def run(self, f: Frame) -> None:
        step = self.step
        while not f.halted:
            step(f)

    def step(self, f: Frame) -> None:
        """Execute one instruction of ``f``; failures raise internal halt signals."""
        pc = f.pc
        code = f.code
        if pc >= len(code):
            f.halted = True
            return
        stack = f.stack
        op = code[pc]
        if self.gas <= 0:
            raise _OutOfGas("gas budget exhausted")
        self.gas -= 1
        if f.offsets is not None:
            f.offsets.append(pc)
        if self.hook is not None:
            self.hook(pc, _NAMES.get(op, "INVALID"), stack, f.depth)
        if 0x60 <= op <= 0x7F:
            size = op - 0x5F
            stack.append(int.from_bytes(code[pc + 1:pc + 1 + size].ljust(size, b"\x00"), "big"))
            f.pc = pc + 1 + size
        elif 0x80 <= op <= 0x8F:
            k = op - 0x7F
            if len(stack) < k:
                raise StackUnderflow(f"DUP{k} at {pc:#x}")
            stack.append(stack[-k])
            f.pc = pc + 1
        elif 0x90 <= op <= 0x9F:
            k = op - 0x8F
            if len(stack) <= k:
                raise StackUnderflow(f"SWAP{k} at {pc:#x}")
            stack[-1], stack[-1 - k] = stack[-1 - k], stack[-1]
            f.pc = pc + 1
        else:
            handler = _HANDLERS.get(op)
            if handler is None:
                raise _Invalid(f"invalid opcode {op:#04x} at {pc:#x}")
            if len(stack) < _ARITY[op]:
                raise StackUnderflow(f"{_NAMES[op]} at {pc:#x}")
            if f.observations is not None and op in OBSERVED:
                a = stack[-1]
                b = stack[-2] if op != 0x15 else 0
                if op in (0x12, 0x13):
                    a, b = _signed(a), _signed(b)
                f.observations.append(PredicateObservation(pc, a, b, len(f.offsets) - 1))
            f.pc = pc + 1
            handler(self, f)
        if len(stack) > STACK_LIMIT:
            raise _Invalid("stack overflow")

    # message calls
    def message_call(self, caller: int, origin: int, to: int, value: int, data: bytes,
                     depth: int, traced: bool) -> tuple[Frame, Optional[_Halt]]:
        """Execute code at ``to``; rolls back on failure.  Value moves before execution."""
        state = self.state
        snapshot = {a: acc.clone() for a, acc in state.accounts.items()}
        _transfer(state, caller, to, value)
        acc = state.accounts[to]
        f = Frame(acc.code, to, caller, origin, value, data, depth, _jumpdests(acc.code),
                  offsets=[] if traced else None, observations=[] if traced else None)
        try:
            self.run(f)
        except _Halt as exc:
            state.accounts = snapshot
            return f, exc
        return f, None


def _transfer(state: ChainState, src: int, dst: int, value: int) -> None:
    if value:
        s = state.accounts[src]
        if s.balance < value:
            raise InsufficientBalance(f"{src:#x} holds {s.balance}, needs {value}")
        s.balance -= value
    d = state.accounts.get(dst)
    if d is None:
        d = state.accounts[dst] = Account()
    d.balance += value


def _pop(f: Frame) -> int:
    return f.stack.pop()


# -- handlers -------------------------------------------------------------------

def _stop(vm, f):
    f.halted = True


def _binop(fn):
    def h(vm, f):
        s = f.stack
        a = s.pop()
        b = s.pop()
        s.append(fn(a, b) & MASK)
    return h


def _sdiv(a, b):
    if b == 0:
        return 0
    sa, sb = _signed(a), _signed(b)
    q = abs(sa) // abs(sb)
    return -q if (sa < 0) != (sb < 0) else q


def _smod(a, b):
    if b == 0:
        return 0
    sa, sb = _signed(a), _signed(b)
    r = abs(sa) % abs(sb)
    return -r if sa < 0 else r


def _signextend(k, x):
    if k >= 31:
        return x
    bit = k * 8 + 7
    if x & (1 << bit):
        return x | (MASK - ((1 << bit) - 1))
    return x & ((1 << bit) - 1)


def _byte(i, x):
    return (x >> (8 * (31 - i))) & 0xFF if i < 32 else 0


def _sar(shift, x):
    sx = _signed(x)
    if shift >= 256:
        return MASK if sx < 0 else 0
    return sx >> shift


def _addmod(vm, f):
    s = f.stack
    a, b, m = s.pop(), s.pop(), s.pop()
    s.append((a + b) % m if m else 0)


def _mulmod(vm, f):
    s = f.stack
    a, b, m = s.pop(), s.pop(), s.pop()
    s.append((a * b) % m if m else 0)


def _iszero(vm, f):
    f.stack.append(1 if f.stack.pop() == 0 else 0)


def _not(vm, f):
    f.stack.append(MASK ^ f.stack.pop())


def _sha3(vm, f):
    start, size = _pop(f), _pop(f)
    f.stack.append(int.from_bytes(keccak256(vm._mread(f, start, size)), "big"))


def _push_value(value_fn):
    def h(vm, f):
        f.stack.append(value_fn(vm, f) & MASK)
    return h


def _balance(vm, f):
    f.stack.append(vm.state.balance(_pop(f) & ADDRESS_MASK))


def _calldataload(vm, f):
    i = _pop(f)
    word = f.calldata[i:i + 32] if i < len(f.calldata) else b""
    f.stack.append(int.from_bytes(word.ljust(32, b"\x00"), "big"))


def _copy_from(source_fn):
    def h(vm, f):
        dst, src, size = _pop(f), _pop(f), _pop(f)
        if size == 0:
            return
        data = source_fn(vm, f)
        chunk = data[src:src + size] if src < len(data) else b""
        vm._mwrite(f, dst, chunk.ljust(size, b"\x00"))
    return h


def _returndatacopy(vm, f):
    dst, src, size = _pop(f), _pop(f), _pop(f)
    if src + size > len(f.returndata):
        raise _Invalid("return data out of bounds")
    vm._mwrite(f, dst, f.returndata[src:src + size])


def _extcodesize(vm, f):
    acc = vm.state.accounts.get(_pop(f) & ADDRESS_MASK)
    f.stack.append(len(acc.code) if acc else 0)


def _blockhash(vm, f):
    f.stack.append(vm.state.blockhash(_pop(f)))


def _pop_op(vm, f):
    f.stack.pop()


def _mload(vm, f):
    f.stack.append(int.from_bytes(vm._mread(f, _pop(f), 32), "big"))


def _mstore(vm, f):
    start, value = _pop(f), _pop(f)
    vm._mwrite(f, start, value.to_bytes(32, "big"))


def _mstore8(vm, f):
    start, value = _pop(f), _pop(f)
    vm._mwrite(f, start, bytes([value & 0xFF]))


def _sload(vm, f):
    f.stack.append(vm.state.accounts[f.address].storage.get(_pop(f), 0))


def _sstore(vm, f):
    key, value = _pop(f), _pop(f)
    storage = vm.state.accounts[f.address].storage
    if value:
        storage[key] = value
    else:
        storage.pop(key, None)


def _jump(vm, f):
    dest = _pop(f)
    if dest not in f.jumpdests:
        raise BadJumpDestination(dest)
    f.pc = dest


def _jumpi(vm, f):
    dest, cond = _pop(f), _pop(f)
    if cond:
        if dest not in f.jumpdests:
            raise BadJumpDestination(dest)
        f.pc = dest


def _jumpdest(vm, f):
    pass


def _log(n):
    def h(vm, f):
        start, size = _pop(f), _pop(f)
        topics = tuple(_pop(f) for _ in range(n))
        vm.logs.append((f.address, topics, vm._mread(f, start, size)))
    return h


def _call(vm, f):
    _gas, to, value, a_off, a_size, r_off, r_size = (_pop(f) for _ in range(7))
    to &= ADDRESS_MASK
    data = vm._mread(f, a_off, a_size)
    vm._touch(f, r_off, r_size)
    f.returndata = b""
    state = vm.state
    if state.balance(f.address) < value:
        f.stack.append(0)
        return
    target = state.accounts.get(to)
    if target is None or not target.code:
        _transfer(state, f.address, to, value)
        f.stack.append(1)
        return
    if f.depth >= 1:
        # only one nested level is modelled
        f.stack.append(0)
        return
    callee, failure = vm.message_call(f.address, f.origin, to, value, data, f.depth + 1, False)
    out = callee.output if failure is None else getattr(failure, "data", b"")
    if isinstance(failure, _OutOfGas):
        raise failure
    f.returndata = out
    vm._mwrite(f, r_off, out[:r_size])
    f.stack.append(0 if failure else 1)


def _return(vm, f):
    start, size = _pop(f), _pop(f)
    f.output = vm._mread(f, start, size)
    f.halted = True


def _revert(vm, f):
    start, size = _pop(f), _pop(f)
    raise _Revert(vm._mread(f, start, size))


def _invalid(vm, f):
    raise _Invalid(f"INVALID at {f.pc - 1:#x}")


def _selfdestruct(vm, f):
    beneficiary = _pop(f) & ADDRESS_MASK
    state = vm.state
    amount = state.accounts[f.address].balance
    state.accounts[f.address].balance = 0
    state.accounts.setdefault(beneficiary, Account()).balance += amount
    vm.destroyed.append(f.address)
    f.halted = True


_HANDLERS = {
    0x00: _stop,
    0x01: _binop(lambda a, b: a + b),
    0x02: _binop(lambda a, b: a * b),
    0x03: _binop(lambda a, b: a - b),
    0x04: _binop(lambda a, b: a // b if b else 0),
    0x05: _binop(_sdiv),
    0x06: _binop(lambda a, b: a % b if b else 0),
    0x07: _binop(_smod),
    0x08: _addmod,
    0x09: _mulmod,
    0x0A: _binop(lambda a, b: pow(a, b, WORD)),
    0x0B: _binop(_signextend),
    0x10: _binop(lambda a, b: 1 if a < b else 0),
    0x11: _binop(lambda a, b: 1 if a > b else 0),
    0x12: _binop(lambda a, b: 1 if _signed(a) < _signed(b) else 0),
    0x13: _binop(lambda a, b: 1 if _signed(a) > _signed(b) else 0),
    0x14: _binop(lambda a, b: 1 if a == b else 0),
    0x15: _iszero,
    0x16: _binop(lambda a, b: a & b),
    0x17: _binop(lambda a, b: a | b),
    0x18: _binop(lambda a, b: a ^ b),
    0x19: _not,
    0x1A: _binop(_byte),
    0x1B: _binop(lambda s, x: x << s if s < 256 else 0),
    0x1C: _binop(lambda s, x: x >> s if s < 256 else 0),
    0x1D: _binop(_sar),
    0x20: _sha3,
    0x30: _push_value(lambda vm, f: f.address),
    0x31: _balance,
    0x32: _push_value(lambda vm, f: f.origin),
    0x33: _push_value(lambda vm, f: f.caller),
    0x34: _push_value(lambda vm, f: f.value),
    0x35: _calldataload,
    0x36: _push_value(lambda vm, f: len(f.calldata)),
    0x37: _copy_from(lambda vm, f: f.calldata),
    0x38: _push_value(lambda vm, f: len(f.code)),
    0x39: _copy_from(lambda vm, f: f.code),
    0x3A: _push_value(lambda vm, f: 1),
    0x3B: _extcodesize,
    0x3D: _push_value(lambda vm, f: len(f.returndata)),
    0x3E: _returndatacopy,
    0x40: _blockhash,
    0x41: _push_value(lambda vm, f: 0),
    0x42: _push_value(lambda vm, f: vm.state.timestamp),
    0x43: _push_value(lambda vm, f: vm.state.block_number),
    0x44: _push_value(lambda vm, f: 1),
    0x45: _push_value(lambda vm, f: vm.state.block_gas_limit),
    0x46: _push_value(lambda vm, f: CHAIN_ID),
    0x47: _push_value(lambda vm, f: vm.state.balance(f.address)),
    0x50: _pop_op,
    0x51: _mload,
    0x52: _mstore,
    0x53: _mstore8,
    0x54: _sload,
    0x55: _sstore,
    0x56: _jump,
    0x57: _jumpi,
    0x58: _push_value(lambda vm, f: f.pc - 1),
    0x59: _push_value(lambda vm, f: len(f.memory)),
    0x5A: _push_value(lambda vm, f: max(vm.gas, 0)),
    0x5B: _jumpdest,
    0xA0: _log(0), 0xA1: _log(1), 0xA2: _log(2), 0xA3: _log(3), 0xA4: _log(4),
    0xF1: _call,
    0xF3: _return,
    0xFD: _revert,
    0xFE: _invalid,
    0xFF: _selfdestruct,
}

from .opcodes import OPCODES as _NAMES, stack_effect as _stack_effect  # noqa: E402

_ARITY = {op: _stack_effect(op)[0] for op in _HANDLERS}


# -- transactions -----------------------------------------------------------------

def _effective_gas(state: ChainState, gas: int) -> int:
    return min(gas, state.block_gas_limit)


def _finish(vm: Vm, trace: ExecutionTrace, gas: int) -> None:
    trace.logs = list(vm.logs)
    trace.gas_used = gas - max(vm.gas, 0)
    for a in vm.destroyed:
        vm.state.accounts.pop(a, None)


def _advance_block(state: ChainState) -> int:
    state.tx_count += 1
    state.block_number += 1
    state.timestamp += 1
    return state.tx_count


def deploy(state: ChainState, deploy_bytecode: bytes, encoded_args: bytes = b"",
           value: int = 0, sender: int = 0, gas: int = DEFAULT_GAS_BUDGET,
           hook: Optional[StructLogHook] = None) -> tuple[Optional[int], ExecutionTrace]:
    """Run init code; on success install its output at a fresh address.

    Returns (address or None, trace).  Failed deployments leave the state as
    it was apart from the advanced block clock.
    """
    if sender not in state.accounts:
        raise UnknownAccount(f"sender {sender:#x} does not exist")
    if state.accounts[sender].balance < value:
        raise InsufficientBalance(f"{sender:#x} holds {state.accounts[sender].balance}, needs {value}")
    tx_id = _advance_block(state)
    snapshot = {a: acc.clone() for a, acc in state.accounts.items()}
    creator = state.accounts[sender]
    address = create_address(sender, creator.nonce)
    creator.nonce += 1
    state.accounts[address] = Account(nonce=1)
    init = bytes(deploy_bytecode) + bytes(encoded_args)
    gas = _effective_gas(state, gas)
    vm = Vm(state, gas, hook)
    trace = ExecutionTrace(receipt=Receipt(tx_id, None))
    frame = Frame(init, address, sender, sender, value, b"", 0, valid_jumpdests(init),
                  offsets=trace.executed_offsets, observations=trace.predicate_observations)
    try:
        _transfer(state, sender, address, value)
        vm.run(frame)
    except _Halt as exc:
        state.accounts = snapshot
        state.accounts[sender].nonce += 1
        trace.status = exc.status
        trace.error = str(exc) or exc.status
        trace.return_data = getattr(exc, "data", b"")
        _finish(vm, trace, gas)
        return None, trace
    state.accounts[address].code = frame.output
    trace.return_data = frame.output
    trace.receipt = Receipt(tx_id, address)
    _finish(vm, trace, gas)
    return address, trace


def call(state: ChainState, to: int, calldata: bytes = b"", value: int = 0, sender: int = 0,
         gas: int = DEFAULT_GAS_BUDGET, hook: Optional[StructLogHook] = None) -> ExecutionTrace:
    """Send a transaction to ``to``.  Failures are reported through the trace status."""
    if sender not in state.accounts:
        raise UnknownAccount(f"sender {sender:#x} does not exist")
    if state.accounts[sender].balance < value:
        raise InsufficientBalance(f"{sender:#x} holds {state.accounts[sender].balance}, needs {value}")
    tx_id = _advance_block(state)
    trace = ExecutionTrace(receipt=Receipt(tx_id))
    target = state.accounts.get(to)
    if target is None or not target.code:
        _transfer(state, sender, to, value)
        return trace
    gas = _effective_gas(state, gas)
    vm = Vm(state, gas, hook)
    frame, failure = vm.message_call(sender, sender, to, value, bytes(calldata), 0, True)
    trace.executed_offsets = frame.offsets
    trace.predicate_observations = frame.observations
    if failure is not None:
        vm.destroyed.clear()
        trace.status = failure.status
        trace.error = str(failure) or failure.status
        trace.return_data = getattr(failure, "data", b"")
    else:
        trace.return_data = frame.output
    _finish(vm, trace, gas)
    return trace


def pass_blocks(state: ChainState, n: int) -> ChainState:
    if n < 1:
        raise NonPositiveAdvance(f"block advance must be >= 1, got {n}")
    state.block_number += n
    return state


def pass_time(state: ChainState, seconds: int) -> ChainState:
    if seconds < 1:
        raise NonPositiveAdvance(f"time advance must be >= 1, got {seconds}")
    state.timestamp += seconds
    return state


def parse_accounts(text: str, default_balance: int = 100 * 10 ** 18) -> dict:
    """Accounts file: one ``<20-byte hex address> [balance in wei]`` per line, '#' comments."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        addr_text = parts[0].lower().removeprefix("0x")
        if len(addr_text) != 40:
            raise ValueError(f"line {lineno}: address must be 20 bytes: {parts[0]}")
        address = int(addr_text, 16)
        balance = int(parts[1], 0) if len(parts) > 1 else default_balance
        if balance < 0:
            raise ValueError(f"line {lineno}: negative balance")
        out[address] = balance
    return out

