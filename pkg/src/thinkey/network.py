"""Simulated networking: gossip topology with partial broadcast, and the
full-mesh committee network used by consensus.

The gossip layer sends the full message to a random subset of neighbors
(full_fanout) and only its hash profile to the rest; profile receivers pull
the full message at most once. The mesh layer models per-link latency plus
serialization on the receiver's inbound pipe, so large payloads and busy
nodes slow delivery deterministically.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

from .encoding import enc_str, sha256, u64
from .engine import Engine


def derive_seed(master: int, *labels) -> int:
    """Stable child seed for a named stream; independent of Python's hash()."""
    material = u64(master & 0xFFFFFFFFFFFFFFFF)
    for label in labels:
        material += enc_str(str(label))
    return int.from_bytes(sha256(material)[:8], "big")


@dataclass(frozen=True)
class NetworkTopology:
    nodes: tuple[str, ...]
    adjacency: dict[str, tuple[str, ...]]
    latency_ms: tuple[float, float]
    full_fanout: int

    def __post_init__(self):
        for node, peers in self.adjacency.items():
            if node in peers:
                raise ValueError(f"self-loop at {node}")
            for peer in peers:
                if node not in self.adjacency.get(peer, ()):
                    raise ValueError(f"asymmetric edge {node}->{peer}")
        if self.full_fanout < 0:
            raise ValueError("full_fanout must be nonnegative")
        lo, hi = self.latency_ms
        if not 0 <= lo <= hi:
            raise ValueError("latency range must satisfy 0 <= min <= max")

    def degree(self, node: str) -> int:
        return len(self.adjacency[node])


def random_topology(
    n: int,
    degree: int,
    seed: int,
    latency_ms: tuple[float, float] = (10.0, 100.0),
    full_fanout: int = 1,
) -> NetworkTopology:
    """Each node draws `degree` distinct random neighbors; edges symmetrized."""
    if n < 1:
        raise ValueError("need at least one node")
    rng = random.Random(derive_seed(seed, "topology", n, degree))
    nodes = tuple(f"n{i:04d}" for i in range(n))
    neighbor_sets: dict[str, set[str]] = {node: set() for node in nodes}
    if n > 1:
        for node in nodes:
            others = [m for m in nodes if m != node]
            for peer in rng.sample(others, min(degree, len(others))):
                neighbor_sets[node].add(peer)
                neighbor_sets[peer].add(node)
    adjacency = {node: tuple(sorted(neighbor_sets[node])) for node in nodes}
    return NetworkTopology(nodes, adjacency, latency_ms, full_fanout)


@dataclass
class RedundancyReport:
    per_node_full_copies: dict[str, int]
    network_size: int
    fanout: int
    unreachable: tuple[str, ...]
    pulls: int

    @property
    def mean_full_copies(self) -> float:
        reached = [c for c in self.per_node_full_copies.values() if c > 0]
        return sum(reached) / len(reached) if reached else 0.0


@dataclass(frozen=True)
class _GossipMsg:
    kind: str  # "full" | "profile" | "pull"
    sender: str

    def describe(self) -> dict:
        return {"from": self.sender}


def gossip_broadcast(
    topology: NetworkTopology,
    origin: str,
    message: bytes,
    seed: int,
    drop_prob: float = 0.0,
    engine: Optional[Engine] = None,
) -> RedundancyReport:
    """Broadcast one message from origin; returns per-node full-copy counts.

    Nodes forward once, on first acquiring the full message: the full payload
    to full_fanout random neighbors, the profile to the rest. A profile
    receiver without the payload pulls it from the profile's sender exactly
    once per message identity.
    """
    if origin not in topology.adjacency:
        raise ValueError(f"origin {origin} not in topology")
    if not message:
        raise ValueError("message must be nonempty")
    engine = engine or Engine()
    rng = random.Random(derive_seed(seed, "gossip", origin))
    lo, hi = topology.latency_ms

    copies = {node: 0 for node in topology.nodes}
    holds: set[str] = set()
    requested: set[str] = set()
    pulls = 0

    def send(src: str, dst: str, kind: str) -> None:
        if drop_prob and rng.random() < drop_prob:
            return
        delay = rng.uniform(lo, hi)
        engine.schedule(
            engine.now + delay, dst, _GossipMsg(kind, src), lambda: receive(dst, kind, src)
        )

    def forward(node: str) -> None:
        peers = list(topology.adjacency[node])
        fanout = min(topology.full_fanout, len(peers))
        full_targets = rng.sample(peers, fanout) if fanout else []
        for peer in peers:
            send(node, peer, "full" if peer in full_targets else "profile")

    def receive(node: str, kind: str, src: str) -> None:
        nonlocal pulls
        if kind == "full":
            copies[node] += 1
            if node not in holds:
                holds.add(node)
                forward(node)
        elif kind == "profile":
            if node not in holds and node not in requested:
                requested.add(node)
                send(node, src, "pull")
        elif kind == "pull":
            # node is the pull target and holds the message by construction.
            pulls += 1
            send(node, src, "full")

    holds.add(origin)
    copies[origin] = 1  # the origin's own copy
    forward(origin)
    engine.run_to_quiescence()

    unreachable = tuple(sorted(n for n, c in copies.items() if c == 0))
    return RedundancyReport(copies, len(topology.nodes), topology.full_fanout, unreachable, pulls)


@dataclass
class MeshNet:
    """Full mesh with uniform link latency and receiver-side serialization.

    Arrivals queue FIFO on the receiver's inbound pipe: delivery completes at
    max(arrival, pipe free) + size / bytes_per_ms. The pipe state is shared
    per node across all meshes built over the same `inbound` map, which is
    how cross-chain traffic slows committee rounds.
    """

    engine: Engine
    latency_ms: tuple[float, float]
    bytes_per_ms: float
    seed: int
    deliver: Callable[[float, str, Any], None]
    drop_prob: float = 0.0
    inbound: dict[str, float] = field(default_factory=dict)
    _rng: random.Random = field(init=False)

    def __post_init__(self):
        self._rng = random.Random(derive_seed(self.seed, "mesh"))

    def send(self, src: str, dst: str, payload: Any, size_bytes: int,
             reliable: bool = False) -> None:
        """Schedule a delivery. reliable=True skips the loss knob: it models
        traffic with its own recovery (gossip pull), unlike the consensus
        messages whose loss the protocol timeouts exist for."""
        if not reliable and self.drop_prob and self._rng.random() < self.drop_prob:
            return
        lo, hi = self.latency_ms
        arrival = self.engine.now + self._rng.uniform(lo, hi)
        self.engine.schedule(
            arrival, dst, payload, lambda: self._arrive(dst, payload, size_bytes)
        )

    def _arrive(self, dst: str, payload: Any, size_bytes: int) -> None:
        free = max(self.engine.now, self.inbound.get(dst, 0.0))
        done = free + size_bytes / self.bytes_per_ms
        self.inbound[dst] = done
        self.engine.schedule(done, dst, _Delivery(payload), lambda: self.deliver(done, dst, payload))

    def broadcast(self, src: str, dsts: Iterable[str], payload: Any, size_bytes: int,
                  reliable: bool = False) -> None:
        for dst in dsts:
            self.send(src, dst, payload, size_bytes, reliable=reliable)


@dataclass(frozen=True)
class _Delivery:
    inner: Any

    @property
    def kind(self) -> str:
        from .engine import payload_kind

        return "deliver:" + payload_kind(self.inner)
