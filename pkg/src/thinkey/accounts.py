"""Actor-model accounts: message taxonomy, payment code, per-block execution,
processing procedures, and order-graph validation.

Each account is an actor with a balance, a nonce counting its accepted
external messages, a method table, and private storage. A block's execution
is recorded per account as a processing procedure: the ordered steps
(received message id : emitted message ids). Validators replay procedures
independently and check that the global order graph is acyclic.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .encoding import (
    ADDR,
    MERGE,
    MSG_ID,
    enc_bytes,
    enc_list,
    enc_opt_bytes,
    enc_opt_u64,
    enc_str,
    check,
    node_key,
    sha256,
    sign,
    u32,
    u64,
)

TRAN = "tran"
ADD = "add"

Arg = "str | int"


def _enc_arg(arg) -> bytes:
    if isinstance(arg, bool):
        raise TypeError("bool is not a message argument type")
    if isinstance(arg, int):
        return b"i" + u64(arg)
    if isinstance(arg, str):
        return b"s" + enc_str(arg)
    raise TypeError(f"unsupported argument type {type(arg).__name__}")


@dataclass(frozen=True)
class Message:
    """External (signed, nonced) or relay (emitted, proof-verified) payload.

    `verification` carries the sender signature for external messages; relay
    messages carry no inline verification because their Merkle proof only
    exists once the emitting block is sealed (the envelope carries it).
    """

    from_addr: str
    to_addr: str
    nonce: Optional[int]
    kind: str
    args: tuple
    origin_msg: Optional[bytes] = None  # parent message id, relays only
    origin_index: int = 0
    verification: Optional[bytes] = None

    @property
    def is_external(self) -> bool:
        return self.nonce is not None

    def core_encoding(self) -> bytes:
        """Identity-bearing bytes: everything except the verification data."""
        return (
            enc_str(self.from_addr)
            + enc_str(self.to_addr)
            + enc_opt_u64(self.nonce)
            + enc_str(self.kind)
            + enc_list([_enc_arg(a) for a in self.args])
            + enc_opt_bytes(self.origin_msg)
            + u32(self.origin_index)
        )

    @cached_property
    def id(self) -> bytes:
        return sha256(MSG_ID + self.core_encoding())

    def wire_size(self) -> int:
        return len(self.core_encoding()) + (len(self.verification) if self.verification else 0)

    def amount(self) -> int:
        """Token value the message carries (adds move value; others none)."""
        if self.kind == ADD:
            return int(self.args[0])
        return 0


def account_key(address: str) -> bytes:
    return node_key("acct:" + address)


def sign_external(msg: Message) -> Message:
    tag = sign("acct:" + msg.from_addr, msg.core_encoding())
    return replace(msg, verification=tag)


def external_signature_ok(msg: Message) -> bool:
    if msg.verification is None:
        return False
    return check("acct:" + msg.from_addr, msg.core_encoding(), msg.verification)


def chain_of_address(address: str, shard_count: int) -> str:
    """Home chain of an account: hash of the address mod shard count."""
    idx = int.from_bytes(sha256(ADDR + enc_str(address)), "big") % shard_count
    return f"c{idx}"


# ---------------------------------------------------------------------------
# Account code


def _do_tran(account: "Account", msg: Message) -> list[tuple[str, str, tuple]]:
    recipient, amount = msg.args[0], int(msg.args[1])
    if amount < 0:
        raise ValueError("negative transfer")
    if account.balance >= amount:
        account.balance -= amount
        return [(recipient, ADD, (amount,))]
    return []


def _do_add(account: "Account", msg: Message) -> list[tuple[str, str, tuple]]:
    amount = int(msg.args[0])
    if amount < 0:
        raise ValueError("negative deposit")
    account.balance += amount
    return []


PAYMENT_CODE: dict[str, Callable] = {TRAN: _do_tran, ADD: _do_add}


@dataclass
class Account:
    address: str
    balance: int
    nonce: int = 0
    code: Mapping[str, Callable] = field(default_factory=lambda: PAYMENT_CODE)
    storage: dict = field(default_factory=dict)

    def copy(self) -> "Account":
        return Account(self.address, self.balance, self.nonce, self.code, dict(self.storage))

    def encode(self) -> bytes:
        items = [enc_str(k) + enc_str(str(v)) for k, v in sorted(self.storage.items())]
        methods = enc_list([enc_str(k) for k in sorted(self.code)])
        return (
            enc_str(self.address)
            + u64(self.balance)
            + u64(self.nonce)
            + methods
            + enc_list(items)
        )


# ---------------------------------------------------------------------------
# Procedures


@dataclass(frozen=True)
class Step:
    received: bytes
    emitted: tuple[bytes, ...]
    fault: bool = False

    def encode(self) -> bytes:
        return (
            enc_bytes(self.received)
            + enc_list([enc_bytes(e) for e in self.emitted])
            + (b"\x01" if self.fault else b"\x00")
        )


@dataclass(frozen=True)
class ProcessingProcedure:
    account: str
    steps: tuple[Step, ...]

    def encode(self) -> bytes:
        return enc_str(self.account) + enc_list([s.encode() for s in self.steps])


def sigma_notation(procedures: Sequence[ProcessingProcedure], labels: Mapping[bytes, str]) -> str:
    """Render procedures like "sigma[a] = (m1:m2 | m3)" using the label map."""
    lines = []
    for proc in procedures:
        parts = []
        for step in proc.steps:
            recv = labels.get(step.received, step.received.hex()[:8])
            if step.emitted:
                emits = ",".join(labels.get(e, e.hex()[:8]) for e in step.emitted)
                parts.append(f"{recv}:{emits}")
            else:
                parts.append(recv)
        lines.append(f"sigma[{proc.account}] = (" + " | ".join(parts) + ")")
    return "\n".join(lines)


def apply_message(account: Account, msg: Message) -> tuple[list[Message], bool]:
    """Run the account's method for msg on the account, in place.

    Returns (emitted relay messages, fault flag). A fault consumes the
    message without touching state. Unknown kinds are explicit no-ops.
    """
    if msg.to_addr != account.address:
        raise ValueError(f"message for {msg.to_addr} delivered to {account.address}")
    handler = account.code.get(msg.kind)
    if handler is None:
        return [], False
    scratch = account.copy()
    try:
        emissions = handler(scratch, msg)
    except Exception:
        return [], True
    account.balance = scratch.balance
    account.storage = scratch.storage
    out = []
    for index, (to, kind, args) in enumerate(emissions):
        out.append(
            Message(
                from_addr=account.address,
                to_addr=to,
                nonce=None,
                kind=kind,
                args=tuple(args),
                origin_msg=msg.id,
                origin_index=index,
            )
        )
    return out, False


@dataclass
class ExecutionResult:
    procedures: tuple[ProcessingProcedure, ...]
    inter_relay: tuple[Message, ...]
    outer_relay: tuple[Message, ...]
    post_accounts: dict[str, Account]
    carry_out: tuple[Message, ...]
    executed: tuple[bytes, ...]
    faults: int


def execute_block(
    chain_id: str,
    accounts: Mapping[str, Account],
    inputs: Sequence[Message],
    chain_of: Callable[[str], str],
    step_budget: int = 10_000,
) -> ExecutionResult:
    """Deliver inputs in order, then run same-chain relays FIFO to quiescence.

    Emissions whose recipient lives on another chain are collected as outer
    relays for the block's Merkle tree. If the step budget runs out, the
    remaining same-chain relays are carried to the next block's inputs.
    """
    if len(inputs) > step_budget:
        raise ValueError("more inputs than the step budget allows")
    post: dict[str, Account] = dict(accounts)
    touched: set[str] = set()

    def cell(address: str) -> Account:
        if address not in touched:
            post[address] = post[address].copy() if address in post else Account(address, 0)
            touched.add(address)
        return post[address]

    steps_by_account: dict[str, list[Step]] = {}
    inter: list[Message] = []
    outer: list[Message] = []
    executed: list[bytes] = []
    faults = 0
    queue: deque[Message] = deque(inputs)
    steps = 0

    while queue and steps < step_budget:
        msg = queue.popleft()
        if chain_of(msg.to_addr) != chain_id:
            raise ValueError(f"recipient {msg.to_addr} is not on chain {chain_id}")
        steps += 1
        account = cell(msg.to_addr)
        emissions, fault = apply_message(account, msg)
        if fault:
            faults += 1
        if msg.is_external:
            cell(msg.from_addr).nonce += 1
        steps_by_account.setdefault(msg.to_addr, []).append(
            Step(msg.id, tuple(e.id for e in emissions), fault)
        )
        executed.append(msg.id)
        for emission in emissions:
            if chain_of(emission.to_addr) == chain_id:
                inter.append(emission)
                queue.append(emission)
            else:
                outer.append(emission)

    procedures = tuple(
        ProcessingProcedure(addr, tuple(steps_by_account[addr]))
        for addr in sorted(steps_by_account)
    )
    return ExecutionResult(
        procedures=procedures,
        inter_relay=tuple(inter),
        outer_relay=tuple(outer),
        post_accounts=post,
        carry_out=tuple(queue),
        executed=tuple(executed),
        faults=faults,
    )


# ---------------------------------------------------------------------------
# Order validation (send/receive graph acyclicity)


@dataclass(frozen=True)
class OrderReport:
    valid: bool
    reason: Optional[str] = None  # "cycle" | "unknown-source" | "duplicate-receive"


def check_order(
    procedures: Sequence[ProcessingProcedure], input_ids: Iterable[bytes]
) -> OrderReport:
    """Build the send/receive precedence graph and test it for cycles.

    Vertices are ("r", id) and ("s", id) events. Each account's steps give a
    total order over its own events; every message both sent and received
    adds a send-before-receive edge. Messages received but neither emitted
    anywhere nor present in input_ids make the order invalid outright, as do
    duplicate receives of one id.
    """
    inputs = set(input_ids)
    sent: dict[bytes, tuple] = {}
    received: set[bytes] = set()
    edges: dict[tuple, list[tuple]] = {}

    def add_edge(a: tuple, b: tuple) -> None:
        edges.setdefault(a, []).append(b)
        edges.setdefault(b, [])

    for proc in procedures:
        prev = None
        for step in proc.steps:
            if step.received in received:
                return OrderReport(False, "duplicate-receive")
            received.add(step.received)
            recv_event = ("r", step.received)
            if prev is not None:
                add_edge(prev, recv_event)
            edges.setdefault(recv_event, [])
            prev = recv_event
            for emitted in step.emitted:
                send_event = ("s", emitted)
                sent[emitted] = send_event
                add_edge(prev, send_event)
                prev = send_event

    for msg_id in received:
        if msg_id in sent:
            add_edge(sent[msg_id], ("r", msg_id))
        elif msg_id not in inputs:
            return OrderReport(False, "unknown-source")

    # Kahn's algorithm; leftovers mean a cycle.
    indegree = {v: 0 for v in edges}
    for targets in edges.values():
        for t in targets:
            indegree[t] += 1
    frontier = [v for v, d in indegree.items() if d == 0]
    seen = 0
    while frontier:
        v = frontier.pop()
        seen += 1
        for t in edges[v]:
            indegree[t] -= 1
            if indegree[t] == 0:
                frontier.append(t)
    if seen != len(edges):
        return OrderReport(False, "cycle")
    return OrderReport(True, None)


def validate_order(
    procedures: Sequence[ProcessingProcedure], input_ids: Iterable[bytes]
) -> bool:
    return check_order(procedures, input_ids).valid


# ---------------------------------------------------------------------------
# Block validation


@dataclass(frozen=True)
class BlockValidation:
    ok: bool
    failed_check: Optional[int] = None  # 1 inputs, 2 replay/roots, 3 order
    detail: str = ""


def replay_procedures(
    chain_id: str,
    pre_accounts: Mapping[str, Account],
    inputs: Sequence[Message],
    procedures: Sequence[ProcessingProcedure],
    inter_relay: Sequence[Message],
    outer_relay: Sequence[Message],
    chain_of: Callable[[str], str],
    merged_outer: bool = False,
) -> tuple[bool, str, dict[str, Account]]:
    """Replay each account's procedure independently against the pre-state.

    Checks that every step's recorded emissions are exactly what the code
    produces, that received ids resolve to input or same-chain relay
    messages, that each input is consumed once, and that relay recipients
    match their recorded classification. Returns the replayed post state.
    With merged_outer the block's outer list must equal the canonical merge
    of the raw emissions instead of the raw emissions themselves.
    """
    by_id: dict[bytes, Message] = {}
    for msg in list(inputs) + list(inter_relay) + list(outer_relay):
        if msg.id in by_id:
            return False, f"duplicate message id {msg.id.hex()[:8]}", {}
        by_id[msg.id] = msg
    for msg in inter_relay:
        if chain_of(msg.to_addr) != chain_id:
            return False, "inter relay recipient off-chain", {}
    for msg in outer_relay:
        if chain_of(msg.to_addr) == chain_id:
            return False, "outer relay recipient on-chain", {}

    receivable = {m.id for m in inputs} | {m.id for m in inter_relay}
    post: dict[str, Account] = dict(pre_accounts)
    consumed: set[bytes] = set()
    nonce_bumps: dict[str, int] = {}
    raw_outer: list[Message] = []

    for proc in procedures:
        account = (
            post[proc.account].copy() if proc.account in post else Account(proc.account, 0)
        )
        for step in proc.steps:
            if step.received not in receivable:
                return False, f"step receives unknown id {step.received.hex()[:8]}", {}
            if step.received in consumed:
                return False, "message executed twice", {}
            consumed.add(step.received)
            msg = by_id[step.received]
            if msg.to_addr != proc.account:
                return False, "procedure consumes another account's message", {}
            emissions, fault = apply_message(account, msg)
            if fault != step.fault:
                return False, "fault flag mismatch", {}
            if tuple(e.id for e in emissions) != step.emitted:
                return False, f"emissions diverge at account {proc.account}", {}
            raw_outer.extend(e for e in emissions if chain_of(e.to_addr) != chain_id)
            if msg.is_external:
                nonce_bumps[msg.from_addr] = nonce_bumps.get(msg.from_addr, 0) + 1
        post[proc.account] = account

    replayed = {p.account for p in procedures}
    for sender, bump in nonce_bumps.items():
        account = post[sender] if sender in post else Account(sender, 0)
        if sender not in replayed:
            account = account.copy()  # never alias the caller's pre-state
        account.nonce += bump
        post[sender] = account

    missing = {m.id for m in inputs} - consumed
    if missing:
        return False, f"{len(missing)} input messages never executed", {}
    emitted_ids = {e for proc in procedures for step in proc.steps for e in step.emitted}
    for msg in inter_relay:
        if msg.id not in emitted_ids:
            return False, "inter relay not produced by any step", {}
    if merged_outer:
        expected = tuple(m.id for m in canonical_merge(raw_outer))
        if tuple(m.id for m in outer_relay) != expected:
            return False, "outer relays are not the canonical merge", {}
    else:
        for msg in outer_relay:
            if msg.id not in emitted_ids:
                return False, "outer relay not produced by any step", {}
    return True, "", post


def validate_block_contents(
    chain_id: str,
    pre_accounts: Mapping[str, Account],
    inputs: Sequence[Message],
    procedures: Sequence[ProcessingProcedure],
    inter_relay: Sequence[Message],
    outer_relay: Sequence[Message],
    chain_of: Callable[[str], str],
    relay_ok: Optional[Callable[[Message], bool]] = None,
    merged_outer: bool = False,
) -> tuple[BlockValidation, dict[str, Account]]:
    """The three-part check: input validity, replay, processing order."""
    expected_nonce: dict[str, int] = {}
    for msg in inputs:
        if chain_of(msg.to_addr) != chain_id:
            return BlockValidation(False, 1, "input recipient off-chain"), {}
        if msg.is_external:
            if not external_signature_ok(msg):
                return BlockValidation(False, 1, "bad signature"), {}
            if chain_of(msg.from_addr) != chain_id:
                return BlockValidation(False, 1, "external sender off-chain"), {}
            if msg.from_addr not in expected_nonce:
                pre = pre_accounts.get(msg.from_addr)
                expected_nonce[msg.from_addr] = pre.nonce if pre else 0
            if msg.nonce != expected_nonce[msg.from_addr]:
                return BlockValidation(False, 1, f"nonce gap for {msg.from_addr}"), {}
            expected_nonce[msg.from_addr] += 1
        else:
            if relay_ok is not None and not relay_ok(msg):
                return BlockValidation(False, 1, "relay input failed verification"), {}

    ok, detail, post = replay_procedures(
        chain_id, pre_accounts, inputs, procedures, inter_relay, outer_relay, chain_of,
        merged_outer=merged_outer,
    )
    if not ok:
        return BlockValidation(False, 2, detail), {}

    report = check_order(procedures, [m.id for m in inputs])
    if not report.valid:
        return BlockValidation(False, 3, report.reason or "invalid order"), {}
    return BlockValidation(True), post


# ---------------------------------------------------------------------------
# Message merging (communication optimization)


def merge_messages(msgs: Sequence[Message]) -> list[Message]:
    """Collapse add messages per recipient into one; everything else passes.

    The merged message takes the position of the recipient's first add and
    derives its identity from the constituent ids, so merging is replayable.
    Groups of one are returned untouched.
    """
    groups: dict[str, list[Message]] = {}
    for msg in msgs:
        if msg.kind == ADD:
            groups.setdefault(msg.to_addr, []).append(msg)
    out: list[Message] = []
    emitted_groups: set[str] = set()
    for msg in msgs:
        if msg.kind != ADD:
            out.append(msg)
            continue
        if msg.to_addr in emitted_groups:
            continue
        emitted_groups.add(msg.to_addr)
        group = groups[msg.to_addr]
        if len(group) == 1:
            out.append(msg)
            continue
        total = sum(int(m.args[0]) for m in group)
        out.append(
            Message(
                from_addr=group[0].from_addr,
                to_addr=msg.to_addr,
                nonce=None,
                kind=ADD,
                args=(total,),
                origin_msg=sha256(MERGE + b"".join(m.id for m in group)),
                origin_index=0,
            )
        )
    return out


def canonical_merge(msgs: Sequence[Message]) -> list[Message]:
    """Order-independent merge for block pipelines.

    Sorting by (recipient, id) first makes the result a pure function of the
    message multiset, so independent replays of the same procedures agree on
    the merged outer-relay list regardless of execution interleaving.
    """
    ordered = sorted(msgs, key=lambda m: (m.to_addr, m.id))
    return merge_messages(ordered)
