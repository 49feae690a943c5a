"""Deterministic simulator and protocol library for a double-layer sharded
blockchain: root chain plus parallel transaction chains, stake-elected
committees with three-stage consensus, actor-model accounts, Merkle-proof
cross-chain relays, and the accompanying analysis toolkit."""

__version__ = "0.1.0"

from .accounts import (  # noqa: F401
    Account,
    Message,
    apply_message,
    execute_block,
    merge_messages,
    validate_order,
)
from .analysis import efficiency, qos, scalability, speedup, summarize  # noqa: F401
from .chain import Block, ChainState, Digest, seal_block  # noqa: F401
from .committee import (  # noqa: F401
    Committee,
    FailureParams,
    Seed,
    StakeRegistry,
    elect,
    failure_probability,
    next_seed,
    system_failure_bound,
)
from .consensus import Decision, RoundDriver, TimeoutConfig  # noqa: F401
from .crosschain import RelayEnvelope, classify, verify_relay  # noqa: F401
from .engine import Engine, SimEvent  # noqa: F401
from .merkle import MerkleProof, build_merkle, prove, verify  # noqa: F401
from .network import NetworkTopology, gossip_broadcast, random_topology  # noqa: F401
from .runner import RunResult, ScenarioRun, run_scenario  # noqa: F401
from .scenario import Scenario, ScenarioError  # noqa: F401
