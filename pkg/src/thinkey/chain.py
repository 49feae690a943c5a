"""Blocks, digests, and per-chain state.

Encodings are canonical (length-prefixed, declared field order) so block
hashes and state roots are reproducible across runs. The committee proof is
excluded from the block hash: the attestation signs the digest, which
already binds the hash.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Optional, Sequence

from . import merkle
from .accounts import Account, ExecutionResult, Message, ProcessingProcedure, replay_procedures
from .encoding import BLOCK, ZERO32, enc_bytes, enc_list, enc_str, sha256, u32, u64


@dataclass(frozen=True)
class Digest:
    chain_id: str
    height: int
    block_hash: bytes
    outer_relay_root: bytes
    state_root: bytes

    def encode(self) -> bytes:
        return (
            enc_str(self.chain_id)
            + u64(self.height)
            + enc_bytes(self.block_hash)
            + enc_bytes(self.outer_relay_root)
            + enc_bytes(self.state_root)
        )


class SealError(ValueError):
    """Block contents failed their integrity checks at seal time."""


@dataclass(frozen=True)
class Block:
    chain_id: str
    height: int
    parent_digest: bytes
    input_messages: tuple[Message, ...]
    procedures: tuple[ProcessingProcedure, ...]
    inter_relay: tuple[Message, ...]
    outer_relay: tuple[Message, ...]
    outer_relay_root: bytes
    state_root: bytes
    committee_proof: object = None  # attestation; not part of the hash

    def body_encoding(self) -> bytes:
        return (
            enc_str(self.chain_id)
            + u64(self.height)
            + enc_bytes(self.parent_digest)
            + enc_list([m.core_encoding() for m in self.input_messages])
            + enc_list([p.encode() for p in self.procedures])
            + enc_list([m.core_encoding() for m in self.inter_relay])
            + enc_list([m.core_encoding() for m in self.outer_relay])
            + enc_bytes(self.outer_relay_root)
            + enc_bytes(self.state_root)
        )

    @cached_property
    def block_hash(self) -> bytes:
        return sha256(BLOCK + self.body_encoding())

    def digest(self) -> Digest:
        return Digest(
            self.chain_id, self.height, self.block_hash, self.outer_relay_root, self.state_root
        )

    def wire_size(self) -> int:
        return len(self.body_encoding()) + 64

    def message_count(self) -> int:
        return len(self.input_messages) + len(self.inter_relay) + len(self.outer_relay)


def outer_relay_leaves(outer_relay: Sequence[Message]) -> list[bytes]:
    return [m.core_encoding() for m in outer_relay]


def state_root_of(accounts: Mapping[str, Account]) -> bytes:
    """Merkle root over account encodings in address order."""
    return merkle.build_merkle([accounts[a].encode() for a in sorted(accounts)])


@dataclass
class ChainState:
    chain_id: str
    accounts: dict[str, Account]
    tip: Digest
    blocks: list[Block] = field(default_factory=list)
    # Root chain only: per transaction chain, digests in confirmation order.
    confirmed_digests: Optional[dict[str, list[Digest]]] = None

    @property
    def height(self) -> int:
        return self.tip.height

    @classmethod
    def genesis(cls, chain_id: str, accounts: dict[str, Account], root_role: bool = False):
        tip = Digest(
            chain_id=chain_id,
            height=0,
            block_hash=sha256(BLOCK + enc_str(chain_id) + ZERO32),
            outer_relay_root=merkle.EMPTY_ROOT,
            state_root=state_root_of(accounts),
        )
        return cls(chain_id, accounts, tip, [], {} if root_role else None)

    def commit(self, block: Block, post_accounts: dict[str, Account]) -> Digest:
        if block.height != self.tip.height + 1:
            raise ValueError(f"height {block.height} does not extend tip {self.tip.height}")
        if block.parent_digest != self.tip.block_hash:
            raise ValueError("parent digest mismatch")
        self.accounts = post_accounts
        self.blocks.append(block)
        self.tip = block.digest()
        return self.tip


def seal_block(
    chain: ChainState,
    inputs: Sequence[Message],
    result: ExecutionResult,
    chain_of: Callable[[str], str],
    verify: bool = True,
) -> Block:
    """Assemble the next block from an execution result, recomputing roots.

    With verify=True the procedures are replayed against the chain state and
    the block is rejected if the replay diverges from the claimed outputs.
    """
    outer_root = merkle.build_merkle(outer_relay_leaves(result.outer_relay))
    state_root = state_root_of(result.post_accounts)
    if verify:
        ok, detail, post = replay_procedures(
            chain.chain_id,
            chain.accounts,
            inputs,
            result.procedures,
            result.inter_relay,
            result.outer_relay,
            chain_of,
        )
        if not ok:
            raise SealError(f"procedure replay failed: {detail}")
        if state_root_of(post) != state_root:
            raise SealError("replayed state root differs from declared post state")
    return Block(
        chain_id=chain.chain_id,
        height=chain.tip.height + 1,
        parent_digest=chain.tip.block_hash,
        input_messages=tuple(inputs),
        procedures=result.procedures,
        inter_relay=result.inter_relay,
        outer_relay=result.outer_relay,
        outer_relay_root=outer_root,
        state_root=state_root,
    )


# ---------------------------------------------------------------------------
# Root chain blocks


@dataclass(frozen=True)
class RootBlock:
    """Coordinator-chain block: digests, election traffic, and the new seed."""

    chain_id: str
    height: int
    parent_digest: bytes
    digests: tuple = ()  # DigestMessage tuple (crosschain)
    signals: tuple = ()  # ElectionSignal tuple (committee)
    elections: tuple = ()  # ElectionResult tuple (committee)
    seed_value: bytes = ZERO32
    seed_epoch: int = 0

    def body_encoding(self) -> bytes:
        return (
            enc_str(self.chain_id)
            + u64(self.height)
            + enc_bytes(self.parent_digest)
            + enc_list([d.encode() for d in self.digests])
            + enc_list([s.encode() for s in self.signals])
            + enc_list([e.encode() for e in self.elections])
            + enc_bytes(self.seed_value)
            + u64(self.seed_epoch)
            + u32(0)
        )

    @cached_property
    def block_hash(self) -> bytes:
        return sha256(BLOCK + self.body_encoding())

    def wire_size(self) -> int:
        return len(self.body_encoding()) + 64

    def message_count(self) -> int:
        return len(self.digests) + len(self.signals) + len(self.elections)
