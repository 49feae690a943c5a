"""Scenario runner: drives shard chains and the root chain over one
deterministic event engine.

Per shard round: the leader assembles a block from verified relay inputs,
carryover, and mempool externals; the committee runs three-stage consensus;
on agreement the block commits, its digest (with a quorum attestation) goes
to the root chain, and its outer relays are held until the digest is
root-confirmed. Root blocks carry digests, election signals and results,
and a fresh beacon seed, and are announced to every node, which is what
couples shard count to per-node load.

Value conservation is tracked exactly: initial balances plus stakes must
equal final balances plus in-flight relay value plus remaining stakes plus
burned penalties at quiescence.
"""

from __future__ import annotations

import random
import statistics
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

from . import merkle
from .accounts import (
    Account,
    Message,
    canonical_merge,
    chain_of_address,
    execute_block,
    sigma_notation,
    validate_block_contents,
)
from .analysis import PerfSample, Summary, summarize
from .chain import Block, ChainState, RootBlock, outer_relay_leaves, seal_block, state_root_of
from .committee import (
    Committee,
    ElectionCoordinator,
    ElectionResult,
    ElectionSignal,
    StakeRegistry,
    elect,
    genesis_seed,
    next_seed,
)
from .consensus import RoundDriver, RoundOutcome, TimeoutConfig
from .crosschain import (
    DigestMessage,
    RelayDispatcher,
    RelayEnvelope,
    RootLedger,
    make_attestation,
    verify_relay,
)
from .engine import Engine
from .network import MeshNet, derive_seed
from .scenario import Scenario
from .workload import TxRecord, gen_workload, make_accounts, tx_to_message

AVG_MSG_BYTES = 200  # sizing assumption for timeout budgets only
ROUND_GAP_MS = 1.0  # the next leader already holds the decision it needs

VERSION = "0.1.0"


@dataclass
class Violation:
    code: str  # "safety" | "conservation" | "double-execution" | "order" | "stall"
    detail: str


@dataclass
class PendingBuild:
    inputs: list[Message]
    result: object  # ExecutionResult
    block: Block
    alt_block: Optional[Block]
    relay_envelopes: list[RelayEnvelope]
    externals_taken: int
    relays_taken: int
    tx_ids: set[bytes]
    merged_constituents: dict[bytes, list[bytes]]


@dataclass
class ChainRuntime:
    chain_id: str
    state: ChainState
    committee: Committee
    epoch: int = 0
    round_no: int = 0
    rounds_in_epoch: int = 0
    epoch_start_t: float = 0.0
    epoch_times: list = field(default_factory=list)
    mempool: deque = field(default_factory=deque)
    relay_pending: deque = field(default_factory=deque)
    waiting: list = field(default_factory=list)  # (confirm_height | None, envelope)
    carryover: tuple = ()
    empty_streak: int = 0
    commit_times: list = field(default_factory=list)
    root_seen: int = 0
    sleeping: bool = False
    halted: bool = False
    signalled_epochs: set = field(default_factory=set)
    pending_committee: Optional[Committee] = None
    builds: dict = field(default_factory=dict)  # round_no -> PendingBuild
    drivers: dict = field(default_factory=dict)  # round_no -> RoundDriver
    settled_rounds: dict = field(default_factory=dict)  # round_no -> "committed"|"empty"

    @property
    def observer(self) -> str:
        return f"{self.chain_id}-observer"


@dataclass
class RunResult:
    scenario: Scenario
    summary: Optional[Summary]
    epoch_ms: float
    block_stats: dict
    settled: int
    genesis_total: int
    final_total: int
    violations: list
    relay_trace: list
    duration_ms: float
    rounds_total: int
    empty_rounds: int
    committees: dict
    sig_bytes_naive: int
    sig_bytes_aggregated: int
    engine_log: list
    consensus_trace: list
    sigma_sample: str

    def report_row(self) -> dict:
        return {
            "shard_count": self.scenario.shard_count,
            "tps": self.summary.tps if self.summary else 0.0,
            "mean_confirm_ms": self.summary.mean_confirm_ms if self.summary else 0.0,
            "p95_confirm_ms": self.summary.p95_confirm_ms if self.summary else 0.0,
            "cross_ratio": self.scenario.cross_chain_ratio,
            "epoch_ms": self.epoch_ms,
        }

    def manifest(self) -> dict:
        return {
            "package": "thinkey",
            "version": VERSION,
            "scenario": asdict(self.scenario),
            "genesis_total": self.genesis_total,
        }


@dataclass(frozen=True)
class _RoundStart:
    chain_id: str
    round_no: int

    @property
    def kind(self) -> str:
        return "round-start"

    def describe(self) -> dict:
        return {"chain": self.chain_id, "round": self.round_no}


@dataclass(frozen=True)
class _RootAnnounce:
    height: int

    @property
    def kind(self) -> str:
        return "root-announce"

    def describe(self) -> dict:
        return {"height": self.height}


class ScenarioRun:
    """One deterministic simulation of a scenario."""

    def __init__(self, scenario: Scenario, workload: Optional[list[TxRecord]] = None):
        self.scenario = scenario
        self.engine = Engine(record_events=scenario.trace_events)
        self.inbound: dict[str, float] = {}
        self.violations: list[Violation] = []

        self.chain_of = lambda addr: chain_of_address(addr, scenario.shard_count)
        self.byz = {node: strategy for node, strategy in scenario.byzantine}

        # Stake registry and genesis committees.
        self.registry = StakeRegistry()
        for node in scenario.node_ids():
            self.registry.register(node, scenario.stake_per_node)
        self.genesis_stake = self.registry.total_stake()
        self.seed0 = genesis_seed(f"genesis:{scenario.seed}")
        self.last_seed = self.seed0
        self.ledger = RootLedger()
        self.coordinator = ElectionCoordinator()
        self.dispatcher = RelayDispatcher(self.chain_of)
        self.root_committee = elect(self.seed0, "root", self.registry, scenario.committee_size)

        # Accounts and workload.
        if workload is None:
            addresses = make_accounts(scenario.account_count, scenario.shard_count)
            workload = gen_workload(
                addresses, scenario.tx_count, scenario.cross_chain_ratio,
                scenario.seed, scenario.shard_count,
                balance_payers=scenario.balance_payers,
            )
        else:
            addresses = sorted({tx.from_addr for tx in workload}
                               | {tx.to_addr for tx in workload})
        self.workload = workload
        per_chain_accounts: dict[str, dict[str, Account]] = {
            c: {} for c in scenario.chain_ids()
        }
        for addr in addresses:
            per_chain_accounts[self.chain_of(addr)][addr] = Account(
                addr, scenario.initial_balance
            )
        self.genesis_balance = scenario.initial_balance * len(addresses)

        # Chains, each with its genesis committee registered on the root.
        self.chains: dict[str, ChainRuntime] = {}
        for chain_id in scenario.chain_ids():
            committee = elect(self.seed0, chain_id, self.registry, scenario.committee_size)
            state = ChainState.genesis(chain_id, per_chain_accounts[chain_id])
            self.chains[chain_id] = ChainRuntime(chain_id, state, committee)
            self.ledger.register_committee(chain_id, committee, first_height=1)

        # Mempools: txs in file order per payer chain keeps nonces FIFO.
        self.tx_by_id: dict[bytes, TxRecord] = {}
        for tx in workload:
            msg = tx_to_message(tx)
            self.tx_by_id[msg.id] = tx
            self.chains[self.chain_of(tx.from_addr)].mempool.append(msg)

        # Networks: one mesh per committee, all sharing the inbound pipes.
        self.nets: dict[str, MeshNet] = {}
        for chain_id in list(self.chains) + ["root"]:
            self.nets[chain_id] = MeshNet(
                engine=self.engine,
                latency_ms=scenario.latency_ms,
                bytes_per_ms=scenario.bytes_per_ms,
                seed=derive_seed(scenario.seed, "net", chain_id),
                deliver=self._make_deliver(chain_id),
                drop_prob=scenario.drop_prob,
                inbound=self.inbound,
            )
        self.mean_latency = sum(scenario.latency_ms) / 2.0

        # Root chain runtime.
        self.root_height = 0
        self.root_parent = b"\x00" * 32
        self.root_round = 0
        self.root_pending_digests: deque = deque()
        self.root_pending_signals: deque = deque()
        self.root_seen_digest_keys: set = set()
        self.root_sleeping = False
        self.root_drivers: dict[int, RoundDriver] = {}
        self.root_builds: dict[int, tuple] = {}
        self.root_settled: dict[int, str] = {}
        self.root_empty_streak = 0
        self.root_commit_times: list = []
        self.elections_done: set = set()

        # Metrics and bookkeeping.
        self.tx_settle: dict[bytes, float] = {}
        self.add_to_tx: dict[bytes, bytes] = {}
        self.merged_constituents: dict[bytes, list[bytes]] = {}
        self.executed_global: set[bytes] = set()
        self.applied_punishments: set = set()
        self.rounds_total = 0
        self.empty_rounds = 0
        self.sig_bytes_naive = 0
        self.sig_bytes_aggregated = 0
        self.sigma_sample = ""
        self.consensus_trace: list = []

    # -- plumbing -----------------------------------------------------------

    def note_violation(self, code: str, detail: str) -> None:
        self.violations.append(Violation(code, detail))

    def _make_deliver(self, chain_id: str):
        def deliver(t: float, dst: str, payload) -> None:
            self._dispatch(chain_id, t, dst, payload)

        return deliver

    def _dispatch(self, chain_id: str, t: float, dst: str, payload) -> None:
        if isinstance(payload, DigestMessage):
            self._root_ingest_digest(payload)
        elif isinstance(payload, ElectionSignal):
            self._root_ingest_signal(payload)
        elif isinstance(payload, RelayEnvelope):
            self._chain_ingest_envelope(dst, payload)
        elif isinstance(payload, _RootAnnounce):
            self._on_root_announce(dst, payload.height)
        elif chain_id == "root":
            driver = self.root_drivers.get(getattr(payload, "round_no", None))
            if driver is not None:
                driver.dispatch(dst, payload)
        else:
            driver = self.chains[chain_id].drivers.get(getattr(payload, "round_no", None))
            if driver is not None:
                driver.dispatch(dst, payload)

    def _timeouts(self, streak: int) -> TimeoutConfig:
        # The 4x/6x mean-latency stage budgets plus a transmission allowance,
        # otherwise large blocks would trip leader-fault timeouts.
        proposal_bytes = self.scenario.block_size_limit * AVG_MSG_BYTES
        base = TimeoutConfig(
            proposal_ms=4 * self.mean_latency + 2 * proposal_bytes / self.scenario.bytes_per_ms,
            stage_ms=6 * self.mean_latency + 10.0,
        )
        return base.scaled(2 ** min(streak, 6))

    def _collect_driver_bytes(self, driver: RoundDriver) -> None:
        self.sig_bytes_naive += driver.sig_bytes_naive
        self.sig_bytes_aggregated += driver.sig_bytes_aggregated

    # -- shard chain rounds ---------------------------------------------------

    def _chain_has_work(self, runtime: ChainRuntime) -> bool:
        return bool(runtime.mempool or runtime.relay_pending or runtime.carryover)

    def _wake_chain(self, runtime: ChainRuntime) -> None:
        if runtime.sleeping and not runtime.halted:
            runtime.sleeping = False
            self._schedule_round(runtime, self.engine.now + 1.0)

    def _schedule_round(self, runtime: ChainRuntime, t: float) -> None:
        self.engine.schedule(
            t, runtime.observer, _RoundStart(runtime.chain_id, runtime.round_no),
            lambda: self._start_round(runtime),
        )

    def _start_round(self, runtime: ChainRuntime) -> None:
        if runtime.halted:
            return
        scenario = self.scenario
        if scenario.run_rounds is None and not self._chain_has_work(runtime):
            runtime.sleeping = True
            return
        if runtime.round_no >= scenario.max_rounds:
            runtime.halted = True
            self.note_violation("stall", f"{runtime.chain_id} hit max_rounds")
            return

        round_no = runtime.round_no
        build = self._build_block(runtime)
        runtime.builds[round_no] = build
        validation_cache: dict[bytes, tuple[bool, str]] = {}

        def validate(block) -> tuple[bool, str]:
            got = validation_cache.get(block.block_hash)
            if got is None:
                got = self._validate_block(runtime, build, block)
                validation_cache[block.block_hash] = got
            return got

        byz_here = {m: s for m, s in self.byz.items() if m in runtime.committee.members}
        driver = RoundDriver(
            engine=self.engine,
            net=self.nets[runtime.chain_id],
            committee=runtime.committee,
            chain_id=runtime.chain_id,
            round_no=round_no,
            block=build.block,
            validate=validate,
            timeouts=self._timeouts(runtime.empty_streak),
            byzantine=byz_here,
            alt_block=build.alt_block,
            rng=random.Random(derive_seed(scenario.seed, "byz", runtime.chain_id,
                                          round_no)),
            on_decision=lambda decision: self._on_chain_decision(runtime, decision),
            trace_log=self.consensus_trace,
        )
        runtime.drivers[round_no] = driver
        driver.start(self.engine.now,
                     lambda outcome: self._round_complete(runtime, outcome))

    def _build_block(self, runtime: ChainRuntime) -> PendingBuild:
        scenario = self.scenario
        state = runtime.state
        inputs: list[Message] = list(runtime.carryover)
        relay_envelopes: list[RelayEnvelope] = []
        seen_in_block: set[bytes] = {m.id for m in inputs}

        def visible_digest(chain_id: str, height: int):
            return self.ledger.lookup_visible(chain_id, height, runtime.root_seen)

        relays_taken = 0
        for env in runtime.relay_pending:
            if len(inputs) >= scenario.block_size_limit:
                break
            relays_taken += 1
            msg = env.message
            if msg.id in seen_in_block or self.dispatcher.already_executed(
                runtime.chain_id, msg.id
            ):
                continue  # duplicate or redelivery: suppressed
            if not verify_relay(env, visible_digest):
                continue  # unverifiable here and now: dropped from this block
            inputs.append(msg)
            seen_in_block.add(msg.id)
            relay_envelopes.append(env)

        externals_taken = 0
        external_cap = scenario.block_size_limit
        if scenario.externals_per_block is not None:
            external_cap = scenario.externals_per_block
        while (
            externals_taken < len(runtime.mempool)
            and externals_taken < external_cap
            and len(inputs) < scenario.block_size_limit
        ):
            inputs.append(runtime.mempool[externals_taken])
            externals_taken += 1

        result = execute_block(
            runtime.chain_id, state.accounts, inputs, self.chain_of,
            scenario.step_budget,
        )
        merged_constituents: dict[bytes, list[bytes]] = {}
        if scenario.merge_outer and result.outer_relay:
            raw = list(result.outer_relay)
            merged = canonical_merge(raw)
            by_recipient: dict[str, list[bytes]] = {}
            for m in raw:
                by_recipient.setdefault(m.to_addr, []).append(m.id)
            for m in merged:
                merged_constituents[m.id] = by_recipient.get(m.to_addr, [m.id])
            result.outer_relay = tuple(merged)
        block = seal_block(state, inputs, result, self.chain_of, verify=False)

        alt_block = None
        if any(s == "equivocate_proposal" for s in self.byz.values()):
            empty = execute_block(runtime.chain_id, state.accounts, [], self.chain_of)
            alt_block = seal_block(state, [], empty, self.chain_of, verify=False)

        tx_ids = {m.id for m in inputs if m.is_external and m.id in self.tx_by_id}
        return PendingBuild(
            inputs, result, block, alt_block, relay_envelopes,
            externals_taken, relays_taken, tx_ids, merged_constituents,
        )

    def _validate_block(self, runtime: ChainRuntime, build: PendingBuild,
                        block) -> tuple[bool, str]:
        if not isinstance(block, Block):
            return False, "not a block"
        if block.height != runtime.state.height + 1:
            return False, "bad height"
        if block.parent_digest != runtime.state.tip.block_hash:
            return False, "bad parent"
        allowed_relays = {m.id for m in runtime.carryover}
        allowed_relays |= {e.message.id for e in build.relay_envelopes}
        verdict, post = validate_block_contents(
            runtime.chain_id,
            runtime.state.accounts,
            block.input_messages,
            block.procedures,
            block.inter_relay,
            block.outer_relay,
            self.chain_of,
            relay_ok=lambda m: m.id in allowed_relays,
            merged_outer=self.scenario.merge_outer,
        )
        if not verdict.ok:
            return False, f"check{verdict.failed_check}: {verdict.detail}"
        if state_root_of(post) != block.state_root:
            return False, "check2: state root mismatch"
        if merkle.build_merkle(outer_relay_leaves(block.outer_relay)) != block.outer_relay_root:
            return False, "check2: outer relay root mismatch"
        return True, ""

    def _on_chain_decision(self, runtime: ChainRuntime, decision) -> None:
        """First honest agreed decision settles the round; the next round is
        pipelined immediately while stragglers finish in the background."""
        round_no = decision.round_no
        if not decision.agreed or round_no != runtime.round_no:
            return
        if round_no in runtime.settled_rounds:
            return
        build = runtime.builds.get(round_no)
        if build is None:
            return
        t = decision.t
        if decision.block_hash == build.block.block_hash:
            self._commit_block(runtime, build, t)
        elif build.alt_block is not None and decision.block_hash == build.alt_block.block_hash:
            self._commit_alternative(runtime, build, t)
        else:
            self.note_violation("safety", "agreement on an unknown block")
            return
        runtime.settled_rounds[round_no] = "committed"
        runtime.empty_streak = 0
        self._advance_round(runtime, t)

    def _round_complete(self, runtime: ChainRuntime, outcome: RoundOutcome) -> None:
        driver = runtime.drivers.pop(outcome.round_no, None)
        if driver is not None:
            self._collect_driver_bytes(driver)
        self.rounds_total += 1
        if not outcome.safety_ok:
            self.note_violation(
                "safety",
                f"{runtime.chain_id} round {outcome.round_no}: multiple agreed blocks",
            )
        self._apply_punishments(runtime.chain_id, outcome)
        if outcome.round_no not in runtime.settled_rounds:
            runtime.settled_rounds[outcome.round_no] = "empty"
            runtime.builds.pop(outcome.round_no, None)
            self.empty_rounds += 1
            runtime.empty_streak += 1
            if outcome.round_no == runtime.round_no:
                self._advance_round(runtime, outcome.t_end)

    def _advance_round(self, runtime: ChainRuntime, t: float) -> None:
        runtime.builds.pop(runtime.round_no, None)
        runtime.round_no += 1
        runtime.rounds_in_epoch += 1
        self._epoch_bookkeeping(runtime, t)
        if self.scenario.run_rounds is not None and (
            runtime.round_no >= self.scenario.run_rounds
        ):
            runtime.halted = True
            return
        self._schedule_round(runtime, t + ROUND_GAP_MS)

    def _commit_alternative(self, runtime: ChainRuntime, build: PendingBuild,
                            t: float) -> None:
        # The equivocating leader's alternative is an empty block over the
        # same state: nothing is consumed, pending contents retry next round.
        empty = execute_block(runtime.chain_id, runtime.state.accounts, [], self.chain_of)
        runtime.state.commit(build.alt_block, empty.post_accounts)
        runtime.commit_times.append(t)
        self._submit_digest(runtime, build.alt_block, t)

    def _commit_block(self, runtime: ChainRuntime, build: PendingBuild, t: float) -> None:
        runtime.state.commit(build.block, build.result.post_accounts)
        runtime.commit_times.append(t)
        runtime.carryover = build.result.carry_out

        for _ in range(build.externals_taken):
            runtime.mempool.popleft()
        for _ in range(build.relays_taken):
            runtime.relay_pending.popleft()

        # Exactly-once accounting for every message executed by this block.
        for msg_id in build.result.executed:
            if msg_id in self.executed_global:
                self.note_violation("double-execution",
                                    f"message {msg_id.hex()[:12]} executed twice")
            self.executed_global.add(msg_id)
        for env in build.relay_envelopes:
            if not self.dispatcher.mark_executed(runtime.chain_id, env.message.id, t):
                self.note_violation("double-execution",
                                    f"relay {env.message.id.hex()[:12]} re-executed")

        self.merged_constituents.update(build.merged_constituents)
        self._track_settlements(runtime, build, t)

        if not self.sigma_sample and build.result.inter_relay:
            labels = {}
            for i, m in enumerate(build.inputs):
                labels[m.id] = f"m{i + 1}"
            relays = build.result.inter_relay + build.result.outer_relay
            for j, m in enumerate(relays):
                labels[m.id] = f"r{j + 1}"
            self.sigma_sample = sigma_notation(build.result.procedures, labels)

        self._submit_digest(runtime, build.block, t)
        self.dispatcher.hold(build.block, t)

    def _track_settlements(self, runtime: ChainRuntime, build: PendingBuild,
                           t: float) -> None:
        """Intra-chain txs settle at commit; cross-chain ones when their add
        executes at the destination. Merged adds settle all constituents."""
        outer_ids = {m.id for m in build.result.outer_relay}
        raw_to_merged: dict[bytes, bytes] = {}
        for merged_id, raws in build.merged_constituents.items():
            for raw in raws:
                raw_to_merged[raw] = merged_id
        for proc in build.result.procedures:
            for step in proc.steps:
                if step.received in build.tx_ids:
                    cross = [
                        e for e in step.emitted
                        if e in outer_ids or e in raw_to_merged
                    ]
                    if cross:
                        for add_id in cross:
                            self.add_to_tx[add_id] = step.received
                    else:
                        self.tx_settle[step.received] = t
                settled_raw_ids = []
                if step.received in self.merged_constituents:
                    settled_raw_ids = self.merged_constituents.pop(step.received)
                elif step.received in self.add_to_tx:
                    settled_raw_ids = [step.received]
                for raw in settled_raw_ids:
                    tx_id = self.add_to_tx.pop(raw, None)
                    if tx_id is not None:
                        self.tx_settle[tx_id] = t

    def _submit_digest(self, runtime: ChainRuntime, block: Block, t: float) -> None:
        digest = block.digest()
        honest = [m for m in runtime.committee.members if m not in self.byz]
        attestation = make_attestation(digest, runtime.committee, honest)
        dm = DigestMessage(digest, attestation)
        leader = runtime.committee.leader(block.height)
        self.nets["root"].send(leader, "root-intake", dm, dm.wire_size(), reliable=True)

    def _epoch_bookkeeping(self, runtime: ChainRuntime, t: float) -> None:
        scenario = self.scenario
        signal_round = max(1, scenario.epoch_rounds - 3)
        if (
            runtime.rounds_in_epoch == signal_round
            and runtime.epoch + 1 not in runtime.signalled_epochs
        ):
            runtime.signalled_epochs.add(runtime.epoch + 1)
            signal = ElectionSignal(runtime.chain_id, runtime.epoch + 1)
            leader = runtime.committee.leader(runtime.round_no)
            self.nets["root"].send(leader, "root-intake", signal, 64, reliable=True)
        if runtime.rounds_in_epoch >= scenario.epoch_rounds:
            runtime.epoch_times.append(t - runtime.epoch_start_t)
            if runtime.pending_committee is not None:
                runtime.committee = runtime.pending_committee
                runtime.pending_committee = None
                runtime.epoch += 1
                self.ledger.register_committee(
                    runtime.chain_id, runtime.committee, runtime.state.height + 1
                )
            # Without a ready election the chain continues under the old
            # committee and hands over at the next boundary instead.
            runtime.rounds_in_epoch = 0
            runtime.epoch_start_t = t

    def _apply_punishments(self, chain_id: str, outcome: RoundOutcome) -> None:
        for node, offense in outcome.punished:
            key = (chain_id, outcome.round_no, node, offense)
            if key in self.applied_punishments:
                continue
            self.applied_punishments.add(key)
            if node in self.registry.entries:
                self.registry.slash(node)

    # -- envelope routing -----------------------------------------------------

    def _chain_ingest_envelope(self, dst: str, env: RelayEnvelope) -> None:
        chain_id = dst.removesuffix("-observer")
        runtime = self.chains.get(chain_id)
        if runtime is None:
            return
        confirm_height = self.ledger.confirm_heights.get(
            (env.origin_chain, env.origin_height)
        )
        if confirm_height is not None and confirm_height <= runtime.root_seen:
            runtime.relay_pending.append(env)
            self._wake_chain(runtime)
        else:
            runtime.waiting.append((confirm_height, env))

    def _on_root_announce(self, dst: str, height: int) -> None:
        if not dst.endswith("-observer") or dst == "root-observer":
            return  # plain nodes track the root chain; no simulation state
        runtime = self.chains.get(dst.removesuffix("-observer"))
        if runtime is None:
            return
        runtime.root_seen = max(runtime.root_seen, height)
        still_waiting = []
        for confirm_height, env in runtime.waiting:
            if confirm_height is None:
                confirm_height = self.ledger.confirm_heights.get(
                    (env.origin_chain, env.origin_height)
                )
            if confirm_height is not None and confirm_height <= runtime.root_seen:
                runtime.relay_pending.append(env)
            else:
                still_waiting.append((confirm_height, env))
        runtime.waiting = still_waiting
        if runtime.relay_pending:
            self._wake_chain(runtime)
        self._apply_elections(runtime)

    def _apply_elections(self, runtime: ChainRuntime) -> None:
        if runtime.pending_committee is not None:
            return
        seed = self.coordinator.ready_seed(runtime.chain_id, runtime.epoch + 1)
        if seed is None:
            return
        runtime.pending_committee = elect(
            seed, runtime.chain_id, self.registry, self.scenario.committee_size
        )

    # -- root chain -----------------------------------------------------------

    def _root_ingest_digest(self, dm: DigestMessage) -> None:
        key = (dm.digest.chain_id, dm.digest.height, dm.digest.block_hash)
        if key in self.root_seen_digest_keys:
            return
        self.root_seen_digest_keys.add(key)
        self.root_pending_digests.append(dm)
        self._wake_root()

    def _root_ingest_signal(self, signal: ElectionSignal) -> None:
        self.root_pending_signals.append(signal)
        self._wake_root()

    def _wake_root(self) -> None:
        if self.root_sleeping:
            self.root_sleeping = False
            self._schedule_root_round(self.engine.now + 1.0)

    def _schedule_root_round(self, t: float) -> None:
        self.engine.schedule(
            t, "root-observer", _RoundStart("root", self.root_round),
            self._start_root_round,
        )

    def _start_root_round(self) -> None:
        if not self.root_pending_digests and not self.root_pending_signals:
            if all(r.halted or r.sleeping for r in self.chains.values()):
                self.root_sleeping = True
                return

        digests = []
        digests_taken = len(self.root_pending_digests)
        for dm in self.root_pending_digests:
            if self.ledger.check_digest(dm):
                digests.append(dm)
        signals = list(self.root_pending_signals)
        signals_taken = len(signals)

        seed = next_seed(self.last_seed)
        elections = []
        for (chain_id, epoch) in list(self.coordinator.signals):
            if (chain_id, epoch) in self.elections_done:
                continue
            ready = self.coordinator.ready_seed(chain_id, epoch)
            if ready is None:
                continue
            members = elect(ready, chain_id, self.registry, self.scenario.committee_size)
            elections.append(ElectionResult(chain_id, epoch, members.members, 0))
            self.elections_done.add((chain_id, epoch))

        block = RootBlock(
            chain_id="root",
            height=self.root_height + 1,
            parent_digest=self.root_parent,
            digests=tuple(digests),
            signals=tuple(signals),
            elections=tuple(elections),
            seed_value=seed.value,
            seed_epoch=seed.epoch,
        )
        round_no = self.root_round
        self.root_builds[round_no] = (block, digests_taken, signals_taken, seed)

        def validate(proposal) -> tuple[bool, str]:
            if not isinstance(proposal, RootBlock):
                return False, "not a root block"
            if proposal.height != self.root_height + 1:
                return False, "bad height"
            for dm in proposal.digests:
                if not self.ledger.check_digest(dm):
                    return False, "bad digest attestation"
            return True, ""

        byz_here = {m: s for m, s in self.byz.items()
                    if m in self.root_committee.members}
        driver = RoundDriver(
            engine=self.engine,
            net=self.nets["root"],
            committee=self.root_committee,
            chain_id="root",
            round_no=round_no,
            block=block,
            validate=validate,
            timeouts=self._timeouts(self.root_empty_streak),
            byzantine=byz_here,
            alt_block=None,
            rng=random.Random(derive_seed(self.scenario.seed, "byz", "root",
                                          round_no)),
            on_decision=self._on_root_decision,
            trace_log=self.consensus_trace,
        )
        self.root_drivers[round_no] = driver
        driver.start(self.engine.now, self._root_round_complete)

    def _on_root_decision(self, decision) -> None:
        round_no = decision.round_no
        if not decision.agreed or round_no != self.root_round:
            return
        if round_no in self.root_settled:
            return
        entry = self.root_builds.get(round_no)
        if entry is None:
            return
        block, digests_taken, signals_taken, seed = entry
        if decision.block_hash != block.block_hash:
            self.note_violation("safety", "root agreement on an unknown block")
            return
        self.root_settled[round_no] = "committed"
        t = decision.t

        for _ in range(digests_taken):
            self.root_pending_digests.popleft()
        for _ in range(signals_taken):
            self.root_pending_signals.popleft()
        self.root_height = block.height
        self.root_parent = block.block_hash
        self.root_commit_times.append(t)
        self.last_seed = seed
        self.root_empty_streak = 0

        self.coordinator.record_seed(block.height, seed)
        for signal in block.signals:
            self.coordinator.record_signal(signal, block.height)
        for dm in block.digests:
            if self.ledger.accept_digest(dm, block.height):
                for env in self.dispatcher.release(
                    dm.digest.chain_id, dm.digest.height, t
                ):
                    self._route_envelope(dm.digest.chain_id, env)
        # Every node tracks the root chain; announcing the block to all of
        # them is what makes shard count show up in per-node load.
        announce = _RootAnnounce(block.height)
        targets = list(self.scenario.node_ids()) + [
            r.observer for r in self.chains.values()
        ]
        leader = self.root_committee.leader(round_no)
        self.nets["root"].broadcast(leader, targets, announce, block.wire_size(),
                                    reliable=True)
        self._advance_root_round(t)

    def _root_round_complete(self, outcome: RoundOutcome) -> None:
        driver = self.root_drivers.pop(outcome.round_no, None)
        if driver is not None:
            self._collect_driver_bytes(driver)
        self.rounds_total += 1
        if not outcome.safety_ok:
            self.note_violation("safety", f"root round {outcome.round_no}")
        if outcome.round_no not in self.root_settled:
            self.root_settled[outcome.round_no] = "empty"
            self.root_builds.pop(outcome.round_no, None)
            self.root_empty_streak += 1
            self.empty_rounds += 1
            if outcome.round_no == self.root_round:
                self._advance_root_round(outcome.t_end)

    def _advance_root_round(self, t: float) -> None:
        self.root_builds.pop(self.root_round, None)
        self.root_round += 1
        self._schedule_root_round(t + ROUND_GAP_MS)

    def _route_envelope(self, origin_chain: str, env: RelayEnvelope) -> None:
        dest = self.chain_of(env.message.to_addr)
        runtime = self.chains[dest]
        origin_leader = self.chains[origin_chain].committee.leader(env.origin_height)
        self.nets[dest].send(origin_leader, runtime.observer, env, env.wire_size(),
                             reliable=True)
        if self.scenario.redelivery:
            self.nets[dest].send(origin_leader, runtime.observer, env,
                                 env.wire_size(), reliable=True)

    # -- results ---------------------------------------------------------------

    def run(self) -> RunResult:
        for runtime in self.chains.values():
            runtime.epoch_start_t = 0.0
            self._schedule_round(runtime, 0.0)
        self._schedule_root_round(1.0)
        self.engine.run_to_quiescence()

        if self.scenario.run_rounds is None:
            for runtime in self.chains.values():
                if self._chain_has_work(runtime):
                    self.note_violation(
                        "stall", f"{runtime.chain_id} ended with pending work"
                    )
            if len(self.tx_settle) < len(self.workload):
                missing = len(self.workload) - len(self.tx_settle)
                self.note_violation("stall", f"{missing} transactions never settled")

        genesis_total = self.genesis_balance + self.genesis_stake
        final_total = self._total_value()
        if final_total != genesis_total:
            self.note_violation(
                "conservation", f"genesis {genesis_total} != final {final_total}"
            )

        settled = len(self.tx_settle)
        summary = None
        if settled:
            confirm = tuple(self.tx_settle.values())
            summary = summarize([PerfSample((0.0, max(confirm)), settled, confirm)])

        epoch_values = []
        for rt in self.chains.values():
            if rt.epoch_times:
                epoch_values.append(rt.epoch_times[0])
            elif rt.commit_times:
                epoch_values.append(rt.commit_times[-1])
        epoch_ms = statistics.fmean(epoch_values) if epoch_values else 0.0

        gaps = []
        for rt in self.chains.values():
            gaps.extend(
                b - a for a, b in zip(rt.commit_times, rt.commit_times[1:])
            )
        block_stats = {}
        if gaps:
            block_stats = {
                "mean_ms": statistics.fmean(gaps),
                "std_ms": statistics.pstdev(gaps) if len(gaps) > 1 else 0.0,
                "min_ms": min(gaps),
                "max_ms": max(gaps),
                "count": len(gaps),
            }

        all_commits = [t for rt in self.chains.values() for t in rt.commit_times]
        duration = max(
            [max(all_commits, default=0.0)] + list(self.tx_settle.values())
        )

        report_row = {
            "shard_count": self.scenario.shard_count,
            "tps": summary.tps if summary else 0.0,
            "mean_confirm_ms": summary.mean_confirm_ms if summary else 0.0,
            "p95_confirm_ms": summary.p95_confirm_ms if summary else 0.0,
            "cross_ratio": self.scenario.cross_chain_ratio,
            "epoch_ms": epoch_ms,
        }
        self.engine.log_custom(self.engine.now, "run", "report", report_row)

        return RunResult(
            scenario=self.scenario,
            summary=summary,
            epoch_ms=epoch_ms,
            block_stats=block_stats,
            settled=settled,
            genesis_total=genesis_total,
            final_total=final_total,
            violations=list(self.violations),
            relay_trace=list(self.dispatcher.trace),
            duration_ms=duration,
            rounds_total=self.rounds_total,
            empty_rounds=self.empty_rounds,
            committees={c: rt.committee.members for c, rt in self.chains.items()},
            sig_bytes_naive=self.sig_bytes_naive,
            sig_bytes_aggregated=self.sig_bytes_aggregated,
            engine_log=list(self.engine.log),
            consensus_trace=list(self.consensus_trace),
            sigma_sample=self.sigma_sample,
        )

    def _total_value(self) -> int:
        balances = sum(
            acct.balance
            for runtime in self.chains.values()
            for acct in runtime.state.accounts.values()
        )
        in_flight = sum(
            row["amount"] for row in self.dispatcher.trace if row["executed_t"] is None
        )
        carry = sum(
            m.amount() for runtime in self.chains.values() for m in runtime.carryover
        )
        stakes = self.registry.total_stake()
        return balances + in_flight + carry + stakes + self.registry.burned


def run_scenario(scenario: Scenario, workload: Optional[list[TxRecord]] = None) -> RunResult:
    return ScenarioRun(scenario, workload).run()
