"""Three-stage committee consensus: proposal, preparation, confirmation.

Per round, the leader broadcasts a proposed block; members broadcast signed
prepare votes (or a leader-fault vote on timeout); members then broadcast
packages of the votes they saw and decide from a quorum of packages. A
member holding a quorum of matching prepare votes may output the block
early, before confirmation, and that early output is its decision (the
proof is the vote set itself, a different form than a package quorum).

Prepare votes for a block must carry the leader's signature over that
block's hash, so a vote for a fabricated hash is unverifiable and dropped,
and two differently-signed proposals are hard evidence of leader
equivocation. Equivocators are reported in the decision for punishment.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .encoding import TAG_BYTES, check, enc_bytes, enc_str, sha256, sign, u64
from .engine import Engine, EventHandle
from .network import MeshNet

FAULT_VOTE = b"\xff" * 32  # "the leader is faulty" special vote value


class Stage(Enum):
    PROPOSAL = "proposal"
    PREPARATION = "preparation"
    CONFIRMATION = "confirmation"
    DECIDED = "decided"


def proposal_payload(chain_id: str, round_no: int, block_hash: bytes) -> bytes:
    return b"prop" + enc_str(chain_id) + u64(round_no) + enc_bytes(block_hash)


def prepare_payload(
    chain_id: str, round_no: int, vote: bytes, proposal_tag: Optional[bytes]
) -> bytes:
    tag = proposal_tag if proposal_tag is not None else b""
    return b"prep" + enc_str(chain_id) + u64(round_no) + enc_bytes(vote) + enc_bytes(tag)


def package_payload(chain_id: str, round_no: int, votes: tuple) -> bytes:
    body = b"".join(v.member.encode() + v.vote for v in votes)
    return b"pack" + enc_str(chain_id) + u64(round_no) + sha256(body)


@dataclass(frozen=True)
class Proposal:
    kind = "proposal"
    chain_id: str
    round_no: int
    block: object  # anything exposing block_hash and wire_size()
    leader: str
    tag: bytes

    def describe(self) -> dict:
        return {"chain": self.chain_id, "round": self.round_no, "from": self.leader}

    def wire_size(self) -> int:
        return self.block.wire_size() + TAG_BYTES


@dataclass(frozen=True)
class Prepare:
    kind = "prepare"
    chain_id: str
    round_no: int
    member: str
    vote: bytes  # block hash or FAULT_VOTE
    proposal_tag: Optional[bytes]  # leader's signature over the voted block
    tag: bytes

    def describe(self) -> dict:
        return {"chain": self.chain_id, "round": self.round_no, "from": self.member}

    def wire_size(self) -> int:
        return 48 + 32 + TAG_BYTES * 2

    def valid(self, leader: str) -> bool:
        payload = prepare_payload(self.chain_id, self.round_no, self.vote, self.proposal_tag)
        if not check(self.member, payload, self.tag):
            return False
        if self.vote == FAULT_VOTE:
            return True
        if self.proposal_tag is None:
            return False
        return check(leader, proposal_payload(self.chain_id, self.round_no, self.vote),
                     self.proposal_tag)


@dataclass(frozen=True)
class ConfirmPackage:
    kind = "package"
    chain_id: str
    round_no: int
    member: str
    votes: tuple  # Prepare tuple, sorted by member
    tag: bytes

    def describe(self) -> dict:
        return {"chain": self.chain_id, "round": self.round_no, "from": self.member,
                "votes": len(self.votes)}

    def wire_size(self, aggregated: bool = True) -> int:
        base = 48 + len(self.votes) * (8 + 32)
        if aggregated:
            # One aggregate tag plus a signer bitmap instead of per-vote tags.
            return base + TAG_BYTES + (len(self.votes) + 7) // 8
        return base + len(self.votes) * TAG_BYTES


@dataclass(frozen=True)
class DecisionMsg:
    kind = "decision"
    chain_id: str
    round_no: int
    member: str
    agreed: bool
    block_hash: Optional[bytes]

    def describe(self) -> dict:
        return {"chain": self.chain_id, "round": self.round_no, "from": self.member,
                "agreed": self.agreed}

    def wire_size(self) -> int:
        return 80


@dataclass(frozen=True)
class TimeoutConfig:
    proposal_ms: float
    stage_ms: float

    @property
    def budget_ms(self) -> float:
        return self.proposal_ms + 2 * self.stage_ms

    def scaled(self, factor: float) -> "TimeoutConfig":
        return TimeoutConfig(self.proposal_ms * factor, self.stage_ms * factor)


@dataclass(frozen=True)
class Decision:
    chain_id: str
    round_no: int
    member: str
    agreed: bool
    block_hash: Optional[bytes]
    early: bool
    proof_kind: str  # "prepare-quorum" | "package-quorum" | "empty"
    punished: tuple  # ((node, offense), ...)
    t: float
    justification: str = ""


class _MemberBase:
    """Shared plumbing for honest and byzantine member machines."""

    def __init__(self, driver: "RoundDriver", member: str):
        self.driver = driver
        self.member = member

    @property
    def net(self) -> MeshNet:
        return self.driver.net

    @property
    def engine(self) -> Engine:
        return self.driver.engine

    def others(self) -> tuple:
        return self.driver.committee.members

    def deliver(self, payload) -> None:  # pragma: no cover - overridden
        raise NotImplementedError

    def start(self, t_start: float) -> None:
        raise NotImplementedError


class HonestMember(_MemberBase):
    def __init__(self, driver: "RoundDriver", member: str):
        super().__init__(driver, member)
        self.stage = Stage.PROPOSAL
        self.proposal: Optional[Proposal] = None
        self.votes: dict[str, Prepare] = {}
        self.packages: dict[str, ConfirmPackage] = {}
        self.equivocations: list[tuple[str, str]] = []
        self.early_hash: Optional[bytes] = None
        self.decision: Optional[Decision] = None
        self._proposal_timer: Optional[EventHandle] = None
        self._stage_timer: Optional[EventHandle] = None
        self._leader_signed: set[bytes] = set()  # hashes the leader signed

    # -- round start -------------------------------------------------------

    def start(self, t_start: float) -> None:
        driver = self.driver
        if self.member == driver.leader:
            payload = proposal_payload(driver.chain_id, driver.round_no,
                                       driver.block.block_hash)
            proposal = Proposal(driver.chain_id, driver.round_no, driver.block,
                                self.member, sign(self.member, payload))
            driver.trace(self.member, "propose", {"hash": driver.block.block_hash.hex()[:12]})
            self.net.broadcast(self.member, self.others(), proposal, proposal.wire_size())
        self._proposal_timer = self.engine.schedule(
            t_start + driver.timeouts.proposal_ms, self.member,
            _Timeout(driver.chain_id, driver.round_no, "proposal"),
            self._on_proposal_timeout,
        )

    # -- proposal stage ----------------------------------------------------

    def deliver(self, payload) -> None:
        if self.decision is not None:
            return
        if isinstance(payload, Proposal):
            self._on_proposal(payload)
        elif isinstance(payload, Prepare):
            self._on_prepare(payload)
        elif isinstance(payload, ConfirmPackage):
            self._on_package(payload)

    def _on_proposal(self, proposal: Proposal) -> None:
        driver = self.driver
        payload = proposal_payload(driver.chain_id, driver.round_no,
                                   proposal.block.block_hash)
        if proposal.leader != driver.leader or not check(proposal.leader, payload,
                                                         proposal.tag):
            return  # proposal from a non-leader: discard, nothing to vote on
        self._note_leader_hash(proposal.block.block_hash)
        if self.proposal is not None:
            return
        self.proposal = proposal
        if self.stage is not Stage.PROPOSAL:
            return
        vote, detail = driver.validate(proposal.block)
        if vote:
            self._send_prepare(proposal.block.block_hash, proposal.tag)
            driver.trace(self.member, "prepare", {"hash": proposal.block.block_hash.hex()[:12]})
        else:
            self._send_prepare(FAULT_VOTE, None)
            driver.trace(self.member, "fault-vote", {"why": detail})

    def _on_proposal_timeout(self) -> None:
        if self.stage is not Stage.PROPOSAL:
            return
        self.driver.trace(self.member, "fault-vote", {"why": "proposal timeout"})
        self._send_prepare(FAULT_VOTE, None)

    def _send_prepare(self, vote: bytes, proposal_tag: Optional[bytes]) -> None:
        driver = self.driver
        if self._proposal_timer:
            self.engine.cancel(self._proposal_timer)
        self.stage = Stage.PREPARATION
        payload = prepare_payload(driver.chain_id, driver.round_no, vote, proposal_tag)
        prepare = Prepare(driver.chain_id, driver.round_no, self.member, vote,
                          proposal_tag, sign(self.member, payload))
        self.net.broadcast(self.member, self.others(), prepare, prepare.wire_size())
        self._stage_timer = self.engine.schedule(
            self.engine.now + driver.timeouts.stage_ms, self.member,
            _Timeout(driver.chain_id, driver.round_no, "preparation"),
            self._on_preparation_timeout,
        )

    # -- preparation stage ---------------------------------------------------

    def _note_leader_hash(self, block_hash: bytes) -> None:
        """Two distinct leader-signed hashes are proof of equivocation."""
        if block_hash not in self._leader_signed:
            self._leader_signed.add(block_hash)
            if len(self._leader_signed) > 1:
                self._record_equivocation(self.driver.leader, "proposal")

    def _ingest_vote(self, prepare: Prepare) -> None:
        if prepare.vote != FAULT_VOTE:
            self._note_leader_hash(prepare.vote)
        existing = self.votes.get(prepare.member)
        if existing is not None:
            if existing.vote != prepare.vote:
                self._record_equivocation(prepare.member, "prepare")
            return
        self.votes[prepare.member] = prepare

    def _on_prepare(self, prepare: Prepare) -> None:
        driver = self.driver
        if prepare.member not in driver.committee.members:
            return
        if not prepare.valid(driver.leader):
            return
        self._ingest_vote(prepare)
        if self.stage is Stage.PREPARATION:
            self._maybe_complete_preparation()

    def _maybe_complete_preparation(self) -> None:
        driver = self.driver
        counts = Counter(v.vote for v in self.votes.values())
        top_vote, top_count = counts.most_common(1)[0]
        block_votes = {v: c for v, c in counts.items() if v != FAULT_VOTE}
        if block_votes:
            best_hash = max(block_votes, key=lambda v: (block_votes[v], v))
            if block_votes[best_hash] >= driver.committee.quorum and self.early_hash is None:
                self.early_hash = best_hash
                driver.trace(self.member, "early-output", {"hash": best_hash.hex()[:12]})
        remaining = driver.committee.size - len(self.votes)
        if top_count >= driver.committee.quorum or top_count + remaining < driver.committee.quorum:
            self._send_package()

    def _on_preparation_timeout(self) -> None:
        if self.stage is Stage.PREPARATION:
            self._send_package()

    def _send_package(self) -> None:
        driver = self.driver
        if self._stage_timer:
            self.engine.cancel(self._stage_timer)
        self.stage = Stage.CONFIRMATION
        votes = tuple(self.votes[m] for m in sorted(self.votes))
        payload = package_payload(driver.chain_id, driver.round_no, votes)
        package = ConfirmPackage(driver.chain_id, driver.round_no, self.member, votes,
                                 sign(self.member, payload))
        driver.trace(self.member, "package", {"votes": len(votes)})
        driver.sig_bytes_naive += package.wire_size(aggregated=False)
        driver.sig_bytes_aggregated += package.wire_size(aggregated=True)
        self.net.broadcast(self.member, self.others(), package,
                           package.wire_size(aggregated=True))
        self._stage_timer = self.engine.schedule(
            self.engine.now + driver.timeouts.stage_ms, self.member,
            _Timeout(driver.chain_id, driver.round_no, "confirmation"),
            self._on_confirmation_timeout,
        )

    # -- confirmation stage --------------------------------------------------

    def _on_package(self, package: ConfirmPackage) -> None:
        driver = self.driver
        if package.member not in driver.committee.members:
            return
        payload = package_payload(driver.chain_id, driver.round_no, package.votes)
        if not check(package.member, payload, package.tag):
            return
        existing = self.packages.get(package.member)
        if existing is not None:
            if existing.votes != package.votes:
                self._record_equivocation(package.member, "package")
            return
        self.packages[package.member] = package
        for vote in package.votes:
            if vote.member not in driver.committee.members or not vote.valid(driver.leader):
                continue
            self._ingest_vote(vote)
        if self.stage is Stage.PREPARATION:
            self._maybe_complete_preparation()
        if self.stage is Stage.CONFIRMATION:
            self._maybe_decide(force=False)

    def _evidence_counts(self) -> Counter:
        driver = self.driver
        evidencing: Counter = Counter()
        for package in self.packages.values():
            counts: Counter = Counter()
            for vote in package.votes:
                if vote.member in driver.committee.members and vote.valid(driver.leader):
                    counts[vote.vote] += 1
            for value, count in counts.items():
                if value != FAULT_VOTE and count >= driver.committee.quorum:
                    evidencing[value] += 1
        return evidencing

    def _maybe_decide(self, force: bool) -> None:
        driver = self.driver
        evidencing = self._evidence_counts()
        best_hash, best = (None, 0)
        if evidencing:
            best_hash, best = max(evidencing.items(), key=lambda kv: (kv[1], kv[0]))
        remaining = driver.committee.size - len(self.packages)
        if best >= driver.committee.quorum:
            self._decide(True, best_hash, "package-quorum")
        elif force or best + remaining < driver.committee.quorum:
            self._decide(False, None, "empty")

    def _on_confirmation_timeout(self) -> None:
        if self.stage is Stage.CONFIRMATION:
            self._maybe_decide(force=True)

    def _decide(self, agreed: bool, block_hash: Optional[bytes], proof_kind: str) -> None:
        driver = self.driver
        if self._stage_timer:
            self.engine.cancel(self._stage_timer)
        self.stage = Stage.DECIDED
        early = False
        if self.early_hash is not None:
            # The early output is this member's decision; a conflicting
            # package quorum is impossible (vote quorums intersect honestly).
            assert block_hash is None or block_hash == self.early_hash
            agreed, block_hash, proof_kind, early = (
                True, self.early_hash, "prepare-quorum", True)
        punished = tuple(sorted(set(self.equivocations)))
        justification = "" if agreed else self._empty_justification()
        self.decision = Decision(
            driver.chain_id, driver.round_no, self.member, agreed, block_hash,
            early, proof_kind, punished, self.engine.now, justification,
        )
        driver.trace(self.member, "decide-agreed" if agreed else "decide-empty",
                     {"hash": block_hash.hex()[:12] if block_hash else None})
        note = DecisionMsg(driver.chain_id, driver.round_no, self.member, agreed, block_hash)
        self.net.broadcast(self.member, self.others(), note, note.wire_size())
        driver.on_decision(self.decision)

    def _empty_justification(self) -> str:
        fault_votes = sum(1 for v in self.votes.values() if v.vote == FAULT_VOTE)
        if self.equivocations:
            return "equivocation: " + ",".join(sorted({n for n, _ in self.equivocations}))
        if fault_votes:
            return f"{fault_votes} leader-fault votes"
        return "no package quorum before timeout"

    def _record_equivocation(self, node: str, stage: str) -> None:
        if (node, stage) not in self.equivocations:
            self.equivocations.append((node, stage))
            self.driver.trace(self.member, "equivocation-detected",
                              {"node": node, "stage": stage})


@dataclass(frozen=True)
class _Timeout:
    chain_id: str
    round_no: int
    stage: str

    @property
    def kind(self) -> str:
        return f"timeout:{self.stage}"

    def describe(self) -> dict:
        return {"chain": self.chain_id, "round": self.round_no}


# ---------------------------------------------------------------------------
# Byzantine member strategies

BYZ_STRATEGIES = ("silent", "random_vote", "equivocate_vote", "equivocate_proposal")


class ByzantineMember(_MemberBase):
    """Scripted adversary. Strategies:

    silent: sends nothing.
    random_vote: votes an unverifiable random hash or a false fault vote.
    equivocate_vote: signs different votes for different recipients.
    equivocate_proposal: as leader, sends two different valid blocks to two
    halves of the committee; otherwise acts like random_vote.
    """

    def __init__(self, driver: "RoundDriver", member: str, strategy: str, rng: random.Random):
        super().__init__(driver, member)
        if strategy not in BYZ_STRATEGIES:
            raise ValueError(f"unknown byzantine strategy {strategy}")
        self.strategy = strategy
        self.rng = rng
        self.seen_votes: dict[str, Prepare] = {}
        self.sent_prepare = False
        self.sent_package = False

    def start(self, t_start: float) -> None:
        driver = self.driver
        if self.member != driver.leader or self.strategy == "silent":
            return
        if self.strategy == "equivocate_proposal" and driver.alt_block is not None:
            halves = (driver.block, driver.alt_block)
            for i, dst in enumerate(self.others()):
                block = halves[i % 2]
                payload = proposal_payload(driver.chain_id, driver.round_no, block.block_hash)
                proposal = Proposal(driver.chain_id, driver.round_no, block,
                                    self.member, sign(self.member, payload))
                self.net.send(self.member, dst, proposal, proposal.wire_size())
            driver.trace(self.member, "propose-equivocate", {})
        else:
            payload = proposal_payload(driver.chain_id, driver.round_no,
                                       driver.block.block_hash)
            proposal = Proposal(driver.chain_id, driver.round_no, driver.block,
                                self.member, sign(self.member, payload))
            self.net.broadcast(self.member, self.others(), proposal, proposal.wire_size())

    def deliver(self, payload) -> None:
        if self.strategy == "silent":
            return
        if isinstance(payload, Proposal):
            self._react_to_proposal(payload)
        elif isinstance(payload, Prepare):
            if payload.valid(self.driver.leader):
                self.seen_votes.setdefault(payload.member, payload)
            self._maybe_package()

    def _react_to_proposal(self, proposal: Proposal) -> None:
        if self.sent_prepare:
            return
        self.sent_prepare = True
        driver = self.driver
        for dst in self.others():
            choice = self.rng.random()
            if self.strategy in ("equivocate_vote", "equivocate_proposal"):
                if choice < 0.5:
                    vote, ptag = proposal.block.block_hash, proposal.tag
                else:
                    vote, ptag = FAULT_VOTE, None
            else:  # random_vote: junk hash or a false fault vote, per recipient
                if choice < 0.5:
                    vote, ptag = FAULT_VOTE, None
                else:
                    vote, ptag = bytes(self.rng.randbytes(32)), None
            payload = prepare_payload(driver.chain_id, driver.round_no, vote, ptag)
            prepare = Prepare(driver.chain_id, driver.round_no, self.member, vote,
                              ptag, sign(self.member, payload))
            self.net.send(self.member, dst, prepare, prepare.wire_size())

    def _maybe_package(self) -> None:
        driver = self.driver
        if self.sent_package or len(self.seen_votes) < driver.committee.quorum:
            return
        self.sent_package = True
        votes = tuple(self.seen_votes[m] for m in sorted(self.seen_votes))
        payload = package_payload(driver.chain_id, driver.round_no, votes)
        package = ConfirmPackage(driver.chain_id, driver.round_no, self.member, votes,
                                 sign(self.member, payload))
        self.net.broadcast(self.member, self.others(), package,
                           package.wire_size(aggregated=True))


# ---------------------------------------------------------------------------
# Round driver


@dataclass
class RoundOutcome:
    chain_id: str
    round_no: int
    decisions: dict[str, Decision]
    agreed_hashes: tuple  # distinct non-empty blocks honest members decided
    punished: tuple
    t_start: float
    t_end: float
    honest: tuple[str, ...]

    @property
    def agreed(self) -> bool:
        return len(self.agreed_hashes) == 1

    @property
    def agreed_hash(self) -> Optional[bytes]:
        return self.agreed_hashes[0] if len(self.agreed_hashes) == 1 else None

    @property
    def safety_ok(self) -> bool:
        return len(self.agreed_hashes) <= 1


class RoundDriver:
    """Runs one consensus round for every member of one committee.

    The driver owns the member machines, routes delivered payloads to them,
    and reports each member's Decision through on_decision. Byzantine seats
    are scripted by strategy name.
    """

    def __init__(
        self,
        engine: Engine,
        net: MeshNet,
        committee,
        chain_id: str,
        round_no: int,
        block,
        validate: Callable[[object], tuple[bool, str]],
        timeouts: TimeoutConfig,
        byzantine: Optional[dict[str, str]] = None,
        alt_block=None,
        on_decision: Optional[Callable[[Decision], None]] = None,
        rng: Optional[random.Random] = None,
        trace_log: Optional[list] = None,
    ):
        self.engine = engine
        self.net = net
        self.committee = committee
        self.chain_id = chain_id
        self.round_no = round_no
        self.block = block
        self.alt_block = alt_block
        self.validate = validate
        self.timeouts = timeouts
        self.leader = committee.leader(round_no)
        self.rng = rng or random.Random(0)
        self.trace_log = trace_log if trace_log is not None else []
        self.sig_bytes_naive = 0
        self.sig_bytes_aggregated = 0
        self._external_on_decision = on_decision
        byzantine = byzantine or {}
        self.members: dict[str, _MemberBase] = {}
        for member in committee.members:
            if member in byzantine:
                self.members[member] = ByzantineMember(
                    self, member, byzantine[member],
                    random.Random(self.rng.getrandbits(64)))
            else:
                self.members[member] = HonestMember(self, member)
        self.honest = tuple(m for m in committee.members if m not in byzantine)
        self.decisions: dict[str, Decision] = {}
        self._done_callback: Optional[Callable[[RoundOutcome], None]] = None
        self.t_start: float = 0.0

    def trace(self, member: str, action: str, detail: dict) -> None:
        record = {"round": self.round_no, "member": member, "action": action,
                  "t": self.engine.now}
        record.update(detail)
        self.trace_log.append(record)
        self.engine.log_custom(self.engine.now, member, "consensus",
                               {"chain": self.chain_id, "round": self.round_no,
                                "action": action})

    def start(self, t_start: float, on_complete: Optional[Callable] = None) -> None:
        self.t_start = t_start
        self._done_callback = on_complete
        for member_machine in self.members.values():
            member_machine.start(t_start)

    def dispatch(self, dst: str, payload) -> None:
        machine = self.members.get(dst)
        if machine is not None:
            machine.deliver(payload)

    def on_decision(self, decision: Decision) -> None:
        self.decisions[decision.member] = decision
        if self._external_on_decision:
            self._external_on_decision(decision)
        if all(m in self.decisions for m in self.honest) and self._done_callback:
            callback, self._done_callback = self._done_callback, None
            callback(self.outcome())

    def outcome(self) -> RoundOutcome:
        honest_decisions = [self.decisions[m] for m in self.honest if m in self.decisions]
        agreed = tuple(sorted({d.block_hash for d in honest_decisions if d.agreed}))
        punished = tuple(sorted({p for d in honest_decisions for p in d.punished}))
        t_end = max((d.t for d in honest_decisions), default=self.engine.now)
        return RoundOutcome(
            self.chain_id, self.round_no, dict(self.decisions),
            agreed, punished, self.t_start, t_end, self.honest,
        )
