"""Scenario configuration: the knobs for one simulation run, JSON in/out,
and field-level validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional


class ScenarioError(ValueError):
    """Invalid scenario configuration; message names the offending field."""


@dataclass
class Scenario:
    seed: int = 7
    shard_count: int = 4
    nodes_total: int = 120
    committee_size: int = 13
    epoch_rounds: int = 20
    tx_count: int = 10_000
    cross_chain_ratio: float = 0.2
    byzantine: list = field(default_factory=list)  # [node, strategy] pairs
    block_size_limit: int = 500
    externals_per_block: Optional[int] = None  # None = fill to block_size_limit
    degree: int = 10
    full_fanout: int = 1
    latency_ms: tuple = (10.0, 100.0)
    drop_prob: float = 0.0

    # Plumbing knobs (defaults documented in the README).
    account_count: int = 2000
    initial_balance: int = 1000
    stake_per_node: int = 100
    bytes_per_ms: float = 1250.0  # per-node inbound bandwidth (10 Mbit/s)
    step_budget: int = 10_000
    target_confirm_ms: float = 1000.0
    run_rounds: Optional[int] = None  # fixed rounds per chain; None = drain workload
    balance_payers: bool = False  # equalize per-shard external load
    max_rounds: int = 2000
    redelivery: bool = False  # adversarially redeliver every relay envelope
    merge_outer: bool = False  # merge outer add messages per recipient
    trace_events: bool = False  # keep the raw engine event log
    workload_file: Optional[str] = None

    def __post_init__(self):
        self.latency_ms = tuple(self.latency_ms)
        self.byzantine = [tuple(b) for b in self.byzantine]
        self.validate()

    def validate(self) -> None:
        if self.shard_count < 1:
            raise ScenarioError("shard_count: must be >= 1")
        if self.shard_count == 1:
            self.cross_chain_ratio = 0.0
        if not 0.0 <= self.cross_chain_ratio <= 1.0:
            raise ScenarioError("cross_chain_ratio: must be in [0, 1]")
        if self.committee_size < 1:
            raise ScenarioError("committee_size: must be >= 1")
        if self.nodes_total < self.committee_size:
            raise ScenarioError("nodes_total: fewer nodes than committee_size")
        if self.epoch_rounds < 1:
            raise ScenarioError("epoch_rounds: must be >= 1")
        if self.block_size_limit < 1:
            raise ScenarioError("block_size_limit: must be >= 1")
        if self.block_size_limit > self.step_budget:
            raise ScenarioError("block_size_limit: exceeds step_budget")
        if self.tx_count < 0:
            raise ScenarioError("tx_count: must be >= 0")
        if self.account_count < 2 * self.shard_count:
            raise ScenarioError("account_count: need at least two accounts per shard")
        if not 0 <= self.latency_ms[0] <= self.latency_ms[1]:
            raise ScenarioError("latency_ms: need 0 <= min <= max")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ScenarioError("drop_prob: must be in [0, 1)")
        if self.bytes_per_ms <= 0:
            raise ScenarioError("bytes_per_ms: must be positive")
        if self.degree < 1 or self.full_fanout < 0:
            raise ScenarioError("degree/full_fanout: degree >= 1, fanout >= 0")
        for pair in self.byzantine:
            if len(pair) != 2:
                raise ScenarioError("byzantine: entries are [node, strategy] pairs")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ScenarioError(f"unknown fields: {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        data = json.loads(text)
        if "scenario" in data:  # manifest files embed the scenario
            data = data["scenario"]
        return cls.from_dict(data)

    def chain_ids(self) -> list[str]:
        return [f"c{i}" for i in range(self.shard_count)]

    def node_ids(self) -> list[str]:
        return [f"n{i:04d}" for i in range(self.nodes_total)]
