"""Trace providers: run statements against a chain and return execution traces.

``EmbeddedProvider`` uses the in-process interpreter.  ``RemoteProvider``
forwards transactions to an external dev node over JSON-RPC and converts
its debug traces (structLogs) into the same ExecutionTrace shape.
"""
from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Any, Optional, Protocol

from . import chain
from .abi import encode_call
from .artifact import ContractArtifact
from .chain import (
    ChainState, ExecutionTrace, InsufficientBalance, PredicateObservation, ProviderUnavailable,
    Receipt, OBSERVED,
)
from .testgen import Constructor, FunctionCall, GenConfig, PassBlocks, PassTime, Statement

REMOTE_ENV = "EVMSBST_RPC_URL"


class TraceProvider(Protocol):
    def fresh(self, artifact: ContractArtifact) -> Any:
        """An isolated chain handle ready for a constructor statement."""

    def execute(self, statement: Statement, handle: Any) -> ExecutionTrace:
        """Run one statement and return its trace."""


@dataclass
class EmbeddedHandle:
    state: ChainState
    artifact: ContractArtifact
    address: Optional[int] = None


class EmbeddedProvider:
    def __init__(self, config: GenConfig, seed: int = 0):
        self.config = config
        self._genesis = ChainState.genesis(config.balances(), seed=seed,
                                           block_gas_limit=config.block_gas_limit)

    def fresh(self, artifact: ContractArtifact) -> EmbeddedHandle:
        return EmbeddedHandle(self._genesis.clone(), artifact)

    def execute(self, statement: Statement, handle: EmbeddedHandle) -> ExecutionTrace:
        state = handle.state
        gas = self.config.gas_budget
        try:
            if isinstance(statement, Constructor):
                art = handle.artifact
                if art.deploy_bytecode is None:
                    raise ValueError(f"{art.name}: no deploy bytecode")
                ctor = art.constructor
                data = encode_call(ctor, statement.args) if ctor else b""
                address, trace = chain.deploy(state, art.deploy_bytecode, data,
                                              statement.value, statement.sender, gas)
                handle.address = address
                return trace
            if isinstance(statement, FunctionCall):
                if handle.address is None:
                    return _skipped("contract not deployed")
                data = encode_call(statement.function, statement.args)
                return chain.call(state, handle.address, data, statement.value,
                                  statement.sender, gas)
        except InsufficientBalance as exc:
            return _skipped(str(exc))
        if isinstance(statement, PassTime):
            chain.pass_time(state, statement.seconds)
            return ExecutionTrace()
        if isinstance(statement, PassBlocks):
            chain.pass_blocks(state, statement.n)
            return ExecutionTrace()
        raise TypeError(f"unknown statement {statement!r}")


def _skipped(reason: str) -> ExecutionTrace:
    return ExecutionTrace(status=chain.REVERTED, error=reason)


# -- remote adapter ---------------------------------------------------------------

def _hex(value: int) -> str:
    return hex(value)


def _addr(value: int) -> str:
    return "0x" + value.to_bytes(20, "big").hex()


def struct_logs_to_trace(struct_logs: list, status: str, depth_base: int = 1) -> ExecutionTrace:
    """Convert debug-trace entries into offsets and predicate observations.

    Entries carry the stack bottom-to-top, so the first operand of a
    comparison (``a``, the top of stack) is ``stack[-1]`` and ``b`` is
    ``stack[-2]``.  Only entries at the outermost depth are kept.
    """
    trace = ExecutionTrace(status=status)
    names = {name: op for op, name in OBSERVED.items()}
    for entry in struct_logs:
        if entry.get("depth", depth_base) != depth_base:
            continue
        pc = int(entry["pc"])
        trace.executed_offsets.append(pc)
        op = entry.get("op")
        if op in names:
            stack = [int(v, 16) if isinstance(v, str) else int(v) for v in entry.get("stack", [])]
            a = stack[-1]
            b = stack[-2] if op != "ISZERO" else 0
            if op in ("SLT", "SGT"):
                a, b = chain._signed(a), chain._signed(b)
            trace.predicate_observations.append(
                PredicateObservation(pc, a, b, len(trace.executed_offsets) - 1))
    return trace


@dataclass
class RemoteHandle:
    snapshot: str
    artifact: ContractArtifact
    address: Optional[int] = None


class RemoteProvider:
    """Adapter for a JSON-RPC dev node exposing debug_traceTransaction.

    Each fresh handle takes an ``evm_snapshot`` after reverting the previous
    one, so test cases do not observe each other.
    """

    def __init__(self, url: Optional[str] = None, config: Optional[GenConfig] = None,
                 timeout: float = 30.0):
        self.url = url or os.environ.get(REMOTE_ENV)
        if not self.url:
            raise ProviderUnavailable(f"no endpoint given and {REMOTE_ENV} is unset")
        self.config = config or GenConfig()
        self.timeout = timeout
        self._id = 0
        self._active: Optional[str] = None

    def rpc(self, method: str, *params) -> Any:
        self._id += 1
        body = json.dumps({"jsonrpc": "2.0", "id": self._id, "method": method,
                           "params": list(params)}).encode()
        req = urllib.request.Request(self.url, body, {"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                reply = json.loads(resp.read())
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise ProviderUnavailable(f"{self.url}: {exc}") from None
        if "error" in reply and reply["error"]:
            raise ProviderUnavailable(f"{method}: {reply['error']}")
        return reply.get("result")

    def fresh(self, artifact: ContractArtifact) -> RemoteHandle:
        if self._active is not None:
            self.rpc("evm_revert", self._active)
        self._active = self.rpc("evm_snapshot")
        return RemoteHandle(self._active, artifact)

    def _send(self, tx: dict) -> tuple[dict, ExecutionTrace]:
        tx_hash = self.rpc("eth_sendTransaction", tx)
        receipt = self.rpc("eth_getTransactionReceipt", tx_hash) or {}
        raw = self.rpc("debug_traceTransaction", tx_hash, {}) or {}
        logs = raw.get("structLogs", [])
        if int(str(receipt.get("status", "0x1")), 16) == 1:
            status = chain.SUCCESS
        elif logs and logs[-1].get("error", "").lower().startswith("out of gas"):
            status = chain.OUT_OF_GAS
        else:
            status = chain.REVERTED
        trace = struct_logs_to_trace(logs, status)
        created = receipt.get("contractAddress")
        trace.receipt = Receipt(int(str(receipt.get("blockNumber", "0x0")), 16),
                                int(created, 16) if created else None)
        return receipt, trace

    def execute(self, statement: Statement, handle: RemoteHandle) -> ExecutionTrace:
        gas = self.config.gas_budget
        if isinstance(statement, Constructor):
            art = handle.artifact
            ctor = art.constructor
            data = art.deploy_bytecode + (encode_call(ctor, statement.args) if ctor else b"")
            _, trace = self._send({"from": _addr(statement.sender), "data": "0x" + data.hex(),
                                   "value": _hex(statement.value), "gas": _hex(gas)})
            handle.address = trace.receipt.created_address
            return trace
        if isinstance(statement, FunctionCall):
            if handle.address is None:
                return _skipped("contract not deployed")
            data = encode_call(statement.function, statement.args)
            _, trace = self._send({"from": _addr(statement.sender), "to": _addr(handle.address),
                                   "data": "0x" + data.hex(), "value": _hex(statement.value),
                                   "gas": _hex(gas)})
            return trace
        if isinstance(statement, PassTime):
            self.rpc("evm_increaseTime", statement.seconds)
            self.rpc("evm_mine")
            return ExecutionTrace()
        if isinstance(statement, PassBlocks):
            for _ in range(statement.n):
                self.rpc("evm_mine")
            return ExecutionTrace()
        raise TypeError(f"unknown statement {statement!r}")
