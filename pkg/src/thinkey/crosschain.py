"""Cross-chain messages: digest messages to the root chain (verified by
committee attestation) and relay envelopes between transaction chains
(verified by Merkle proof against a root-recorded digest).

Relays are deliberately NOT accepted on committee signatures: the emitting
committee may be compromised, so a relay takes effect only once its block's
digest is finally confirmed on the root chain and the inclusion proof
checks out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from . import merkle
from .accounts import Message
from .chain import Block, Digest
from .committee import Committee
from .encoding import TAG_BYTES, check, enc_bytes, enc_list, enc_str, sign, u64


class Classification(Enum):
    INPUT = "input"
    INTER_RELAY = "inter"
    OUTER_RELAY = "outer"


def classify(msg: Message, home_chain: str, chain_of: Callable[[str], str]) -> Classification:
    """Input unless it is a relay, and then inter/outer by recipient chain."""
    if not msg.is_external and chain_of(msg.to_addr) != home_chain:
        return Classification.OUTER_RELAY
    if not msg.is_external:
        return Classification.INTER_RELAY
    return Classification.INPUT


# ---------------------------------------------------------------------------
# Digest messages (chain -> root)


def attestation_payload(digest: Digest, epoch: int) -> bytes:
    return b"att" + digest.encode() + u64(epoch)


@dataclass(frozen=True)
class Attestation:
    epoch: int
    signers: tuple[str, ...]
    tags: tuple[bytes, ...]

    def encode(self) -> bytes:
        return (
            u64(self.epoch)
            + enc_list([enc_str(s) for s in self.signers])
            + enc_list([enc_bytes(t) for t in self.tags])
        )

    def wire_size(self) -> int:
        # Aggregated signature modeling: one tag plus a signer bitmap.
        return 8 + len(self.signers) * 8 + TAG_BYTES + (len(self.signers) + 7) // 8

    def valid_for(self, digest: Digest, committee: Committee) -> bool:
        if self.epoch != committee.epoch:
            return False
        payload = attestation_payload(digest, self.epoch)
        good = 0
        seen = set()
        for signer, tag in zip(self.signers, self.tags):
            if signer in seen or signer not in committee.members:
                continue
            seen.add(signer)
            if check(signer, payload, tag):
                good += 1
        return good >= committee.quorum


def make_attestation(digest: Digest, committee: Committee, signers=None) -> Attestation:
    chosen = tuple(signers) if signers is not None else committee.members
    payload = attestation_payload(digest, committee.epoch)
    return Attestation(committee.epoch, chosen, tuple(sign(s, payload) for s in chosen))


@dataclass(frozen=True)
class DigestMessage:
    digest: Digest
    attestation: Attestation

    @property
    def kind(self) -> str:
        return "digest-msg"

    def describe(self) -> dict:
        return {"chain": self.digest.chain_id, "height": self.digest.height}

    def encode(self) -> bytes:
        return self.digest.encode() + self.attestation.encode()

    def wire_size(self) -> int:
        return len(self.digest.encode()) + self.attestation.wire_size()


# ---------------------------------------------------------------------------
# Relay envelopes (chain -> chain)


@dataclass(frozen=True)
class RelayEnvelope:
    message: Message
    origin_chain: str
    origin_height: int
    leaf_index: int
    proof: merkle.MerkleProof

    @property
    def kind(self) -> str:
        return "relay"

    def describe(self) -> dict:
        return {"origin": self.origin_chain, "height": self.origin_height}

    def wire_size(self) -> int:
        return self.message.wire_size() + 16 + 33 * len(self.proof.siblings)


def envelopes_for_block(block: Block) -> list[RelayEnvelope]:
    """One proof-carrying envelope per outer relay message of the block."""
    leaves = [m.core_encoding() for m in block.outer_relay]
    out = []
    for index, msg in enumerate(block.outer_relay):
        out.append(
            RelayEnvelope(msg, block.chain_id, block.height, index, merkle.prove(leaves, index))
        )
    return out


def verify_relay(
    env: RelayEnvelope, digest_lookup: Callable[[str, int], Optional[Digest]]
) -> bool:
    """True iff the origin digest is root-confirmed and the proof checks.

    An unknown digest is a retriable False: the caller may hold the envelope
    until the origin block is finally confirmed.
    """
    digest = digest_lookup(env.origin_chain, env.origin_height)
    if digest is None:
        return False
    return merkle.verify(
        digest.outer_relay_root, env.message.core_encoding(), env.leaf_index, env.proof
    )


# ---------------------------------------------------------------------------
# Root-side digest ledger and relay routing


@dataclass
class CommitteeTerm:
    committee: Committee
    first_height: int  # first block height this committee attests


@dataclass
class RootLedger:
    """Digests accepted on the root chain plus the committee registry.

    Digest acceptance verifies the attestation against the committee whose
    term covers the block height; the first accepted digest per
    (chain, height) wins and conflicting later ones are kept as evidence.
    """

    confirmed: dict[str, dict[int, Digest]] = field(default_factory=dict)
    confirm_heights: dict[tuple[str, int], int] = field(default_factory=dict)
    terms: dict[str, list[CommitteeTerm]] = field(default_factory=dict)
    conflicts: list[tuple[Digest, Digest]] = field(default_factory=list)
    rejected: int = 0

    def register_committee(self, chain_id: str, committee: Committee, first_height: int):
        terms = self.terms.setdefault(chain_id, [])
        if terms and first_height <= terms[-1].first_height:
            raise ValueError("committee terms must advance in height")
        terms.append(CommitteeTerm(committee, first_height))

    def committee_for_height(self, chain_id: str, height: int) -> Optional[Committee]:
        best = None
        for term in self.terms.get(chain_id, []):
            if term.first_height <= height:
                best = term.committee
            else:
                break
        return best

    def current_committee(self, chain_id: str) -> Optional[Committee]:
        terms = self.terms.get(chain_id, [])
        return terms[-1].committee if terms else None

    def check_digest(self, dm: DigestMessage) -> bool:
        """Pure acceptability check: attestation valid for the height's term."""
        committee = self.committee_for_height(dm.digest.chain_id, dm.digest.height)
        return committee is not None and dm.attestation.valid_for(dm.digest, committee)

    def accept_digest(self, dm: DigestMessage, root_height: int = 0) -> bool:
        digest = dm.digest
        if not self.check_digest(dm):
            self.rejected += 1
            return False
        chain_digests = self.confirmed.setdefault(digest.chain_id, {})
        existing = chain_digests.get(digest.height)
        if existing is not None:
            if existing.block_hash != digest.block_hash:
                self.conflicts.append((existing, digest))
            return False
        chain_digests[digest.height] = digest
        self.confirm_heights[(digest.chain_id, digest.height)] = root_height
        return True

    def lookup(self, chain_id: str, height: int) -> Optional[Digest]:
        return self.confirmed.get(chain_id, {}).get(height)

    def lookup_visible(self, chain_id: str, height: int, root_seen: int) -> Optional[Digest]:
        """The digest, but only if its confirming root block is visible."""
        confirmed_at = self.confirm_heights.get((chain_id, height))
        if confirmed_at is None or confirmed_at > root_seen:
            return None
        return self.confirmed[chain_id][height]


@dataclass
class RelayDispatcher:
    """Holds outer-relay envelopes until their origin digest is confirmed,
    then routes them to the recipient chain's pending queue. Recipient-side
    seen-sets give exactly-once execution even under redeliveries."""

    chain_of: Callable[[str], str]
    held: dict[tuple[str, int], list[RelayEnvelope]] = field(default_factory=dict)
    executed: dict[str, set[bytes]] = field(default_factory=dict)
    trace: list[dict] = field(default_factory=list)
    _trace_by_id: dict[str, dict] = field(default_factory=dict)

    def hold(self, block: Block, t: float) -> list[RelayEnvelope]:
        envs = envelopes_for_block(block)
        if envs:
            self.held[(block.chain_id, block.height)] = envs
        for env in envs:
            row = {
                "msg_id": env.message.id.hex(),
                "origin_chain": block.chain_id,
                "dest_chain": self.chain_of(env.message.to_addr),
                "emitted_t": t,
                "root_confirm_t": None,
                "executed_t": None,
                "amount": env.message.amount(),
            }
            self.trace.append(row)
            self._trace_by_id[row["msg_id"]] = row
        return envs

    def release(self, chain_id: str, height: int, t: float) -> list[RelayEnvelope]:
        """Envelopes of a newly root-confirmed block, ready for routing."""
        envs = self.held.pop((chain_id, height), [])
        for env in envs:
            row = self._trace_by_id.get(env.message.id.hex())
            if row is not None and row["root_confirm_t"] is None:
                row["root_confirm_t"] = t
        return envs

    def already_executed(self, dest_chain: str, msg_id: bytes) -> bool:
        return msg_id in self.executed.get(dest_chain, set())

    def mark_executed(self, dest_chain: str, msg_id: bytes, t: float) -> bool:
        """Record execution; False means it was a duplicate."""
        seen = self.executed.setdefault(dest_chain, set())
        if msg_id in seen:
            return False
        seen.add(msg_id)
        row = self._trace_by_id.get(msg_id.hex())
        if row is not None and row["executed_t"] is None:
            row["executed_t"] = t
        return True

    def pending_value(self) -> int:
        """Token value inside envelopes still awaiting root confirmation."""
        return sum(
            env.message.amount() for envs in self.held.values() for env in envs
        )
