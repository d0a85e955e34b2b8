"""EVM opcode table.

Only names are needed for disassembly; the interpreter keeps its own
dispatch table for the supported subset.
"""

OPCODES = {
    0x00: "STOP", 0x01: "ADD", 0x02: "MUL", 0x03: "SUB", 0x04: "DIV",
    0x05: "SDIV", 0x06: "MOD", 0x07: "SMOD", 0x08: "ADDMOD", 0x09: "MULMOD",
    0x0A: "EXP", 0x0B: "SIGNEXTEND",
    0x10: "LT", 0x11: "GT", 0x12: "SLT", 0x13: "SGT", 0x14: "EQ",
    0x15: "ISZERO", 0x16: "AND", 0x17: "OR", 0x18: "XOR", 0x19: "NOT",
    0x1A: "BYTE", 0x1B: "SHL", 0x1C: "SHR", 0x1D: "SAR",
    0x20: "SHA3",
    0x30: "ADDRESS", 0x31: "BALANCE", 0x32: "ORIGIN", 0x33: "CALLER",
    0x34: "CALLVALUE", 0x35: "CALLDATALOAD", 0x36: "CALLDATASIZE",
    0x37: "CALLDATACOPY", 0x38: "CODESIZE", 0x39: "CODECOPY",
    0x3A: "GASPRICE", 0x3B: "EXTCODESIZE", 0x3C: "EXTCODECOPY",
    0x3D: "RETURNDATASIZE", 0x3E: "RETURNDATACOPY", 0x3F: "EXTCODEHASH",
    0x40: "BLOCKHASH", 0x41: "COINBASE", 0x42: "TIMESTAMP", 0x43: "NUMBER",
    0x44: "DIFFICULTY", 0x45: "GASLIMIT", 0x46: "CHAINID", 0x47: "SELFBALANCE",
    0x50: "POP", 0x51: "MLOAD", 0x52: "MSTORE", 0x53: "MSTORE8",
    0x54: "SLOAD", 0x55: "SSTORE", 0x56: "JUMP", 0x57: "JUMPI", 0x58: "PC",
    0x59: "MSIZE", 0x5A: "GAS", 0x5B: "JUMPDEST",
    0xA0: "LOG0", 0xA1: "LOG1", 0xA2: "LOG2", 0xA3: "LOG3", 0xA4: "LOG4",
    0xF0: "CREATE", 0xF1: "CALL", 0xF2: "CALLCODE", 0xF3: "RETURN",
    0xF4: "DELEGATECALL", 0xF5: "CREATE2", 0xFA: "STATICCALL",
    0xFD: "REVERT", 0xFE: "INVALID", 0xFF: "SELFDESTRUCT",
}
for _i in range(32):
    OPCODES[0x60 + _i] = f"PUSH{_i + 1}"
for _i in range(16):
    OPCODES[0x80 + _i] = f"DUP{_i + 1}"
    OPCODES[0x90 + _i] = f"SWAP{_i + 1}"
del _i

MNEMONICS = {name: op for op, name in OPCODES.items()}

PUSH1 = 0x60
PUSH32 = 0x7F
JUMP = 0x56
JUMPI = 0x57
JUMPDEST = 0x5B
INVALID = 0xFE

# Instructions after which control never falls through to the next one.
TERMINATORS = frozenset({0x00, 0x56, 0xF3, 0xFD, 0xFE, 0xFF})

# Table of comparison opcodes that can control a branch.
COMPARISONS = {0x10: "LT", 0x11: "GT", 0x12: "SLT", 0x13: "SGT", 0x14: "EQ"}
ISZERO = 0x15


def is_push(opcode: int) -> bool:
    return PUSH1 <= opcode <= PUSH32


def push_size(opcode: int) -> int:
    return opcode - PUSH1 + 1 if is_push(opcode) else 0


# (pops, pushes) per opcode; PUSH/DUP/SWAP are handled by callers.
STACK_EFFECT = {
    0x00: (0, 0), 0x01: (2, 1), 0x02: (2, 1), 0x03: (2, 1), 0x04: (2, 1),
    0x05: (2, 1), 0x06: (2, 1), 0x07: (2, 1), 0x08: (3, 1), 0x09: (3, 1),
    0x0A: (2, 1), 0x0B: (2, 1),
    0x10: (2, 1), 0x11: (2, 1), 0x12: (2, 1), 0x13: (2, 1), 0x14: (2, 1),
    0x15: (1, 1), 0x16: (2, 1), 0x17: (2, 1), 0x18: (2, 1), 0x19: (1, 1),
    0x1A: (2, 1), 0x1B: (2, 1), 0x1C: (2, 1), 0x1D: (2, 1),
    0x20: (2, 1),
    0x30: (0, 1), 0x31: (1, 1), 0x32: (0, 1), 0x33: (0, 1), 0x34: (0, 1),
    0x35: (1, 1), 0x36: (0, 1), 0x37: (3, 0), 0x38: (0, 1), 0x39: (3, 0),
    0x3A: (0, 1), 0x3B: (1, 1), 0x3C: (4, 0), 0x3D: (0, 1), 0x3E: (3, 0),
    0x3F: (1, 1),
    0x40: (1, 1), 0x41: (0, 1), 0x42: (0, 1), 0x43: (0, 1), 0x44: (0, 1),
    0x45: (0, 1), 0x46: (0, 1), 0x47: (0, 1),
    0x50: (1, 0), 0x51: (1, 1), 0x52: (2, 0), 0x53: (2, 0), 0x54: (1, 1),
    0x55: (2, 0), 0x56: (1, 0), 0x57: (2, 0), 0x58: (0, 1), 0x59: (0, 1),
    0x5A: (0, 1), 0x5B: (0, 0),
    0xA0: (2, 0), 0xA1: (3, 0), 0xA2: (4, 0), 0xA3: (5, 0), 0xA4: (6, 0),
    0xF0: (3, 1), 0xF1: (7, 1), 0xF2: (7, 1), 0xF3: (2, 0), 0xF4: (6, 1),
    0xF5: (4, 1), 0xFA: (6, 1), 0xFD: (2, 0), 0xFE: (0, 0), 0xFF: (1, 0),
}


def stack_effect(opcode: int) -> tuple[int, int]:
    """Pops/pushes for ``opcode``; unknown opcodes behave like INVALID."""
    if is_push(opcode):
        return 0, 1
    if 0x80 <= opcode <= 0x8F:
        n = opcode - 0x7F
        return n, n + 1
    if 0x90 <= opcode <= 0x9F:
        n = opcode - 0x8F
        return n + 1, n + 1
    return STACK_EFFECT.get(opcode, (0, 0))
