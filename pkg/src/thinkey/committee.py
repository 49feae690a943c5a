"""Stake registry, seeded committee election, election signal bookkeeping,
and the committee-failure analytics.

Election uses exponential clocks: each eligible node gets priority
-ln(u)/stake with u derived from (seed, chain, node), and the n smallest
priorities win. That gives exact stake-proportional sampling without
replacement and is deterministic for a given seed. The random beacon is a
hash chain stub behind the same periodic-seed interface as a threshold
signature beacon would present.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

from .encoding import PRIORITY, SEED, enc_str, sha256, u64

FractionLike = Union[Fraction, int, str, float]


@dataclass(frozen=True)
class Seed:
    epoch: int
    value: bytes

    def __post_init__(self):
        if len(self.value) != 32:
            raise ValueError("seed value must be 32 bytes")


def genesis_seed(material: str = "genesis") -> Seed:
    return Seed(0, sha256(SEED + enc_str(material)))


def next_seed(prev: Seed) -> Seed:
    epoch = prev.epoch + 1
    return Seed(epoch, sha256(SEED + prev.value + u64(epoch)))


@dataclass
class StakeEntry:
    stake: int
    pubkey: bytes
    frozen: bool = True


class StakeRegistry:
    """Registered consensus nodes and their frozen stakes."""

    def __init__(self):
        self.entries: dict[str, StakeEntry] = {}
        self.burned: int = 0

    def register(self, node: str, stake: int) -> None:
        if stake <= 0:
            raise ValueError("stake must be positive")
        if node in self.entries:
            raise ValueError(f"{node} already registered")
        self.entries[node] = StakeEntry(stake, sha256(enc_str("pk:" + node)))

    def withdraw(self, node: str) -> int:
        entry = self.entries.pop(node)
        return entry.stake

    def slash(self, node: str, fraction: Fraction = Fraction(1, 2)) -> int:
        """Burn a fraction of the node's stake; returns the burned amount."""
        entry = self.entries[node]
        penalty = int(entry.stake * fraction)
        entry.stake -= penalty
        self.burned += penalty
        return penalty

    def eligible(self) -> list[tuple[str, int]]:
        return [(n, e.stake) for n, e in self.entries.items() if e.frozen and e.stake > 0]

    def total_stake(self) -> int:
        return sum(e.stake for e in self.entries.values())


@dataclass(frozen=True)
class Committee:
    chain_id: str
    epoch: int
    members: tuple[str, ...]
    quorum: int

    def __post_init__(self):
        if len(set(self.members)) != len(self.members):
            raise ValueError("duplicate committee members")

    @property
    def size(self) -> int:
        return len(self.members)

    def leader(self, round_no: int) -> str:
        return self.members[round_no % len(self.members)]

    def max_faulty(self) -> int:
        return (len(self.members) - 1) // 3


def quorum_size(n: int) -> int:
    return (2 * n) // 3 + 1


class InsufficientNodes(ValueError):
    pass


def election_priority(seed: Seed, chain_id: str, node: str, stake: int) -> float:
    raw = int.from_bytes(
        sha256(PRIORITY + seed.value + enc_str(chain_id) + enc_str(node)), "big"
    )
    u = (raw + 1) / (2**256)  # in (0, 1]
    return -math.log(u) / stake


def elect(seed: Seed, chain_id: str, registry: StakeRegistry, n: int) -> Committee:
    """Sample n distinct members, probability proportional to stake."""
    pool = registry.eligible()
    if len(pool) < n:
        raise InsufficientNodes(f"need {n} eligible nodes, have {len(pool)}")
    ranked = sorted(
        pool, key=lambda item: (election_priority(seed, chain_id, item[0], item[1]), item[0])
    )
    members = tuple(node for node, _ in ranked[:n])
    return Committee(chain_id, seed.epoch, members, quorum_size(n))


# ---------------------------------------------------------------------------
# Election signal flow (signal on the root chain, elect with the next seed)


@dataclass(frozen=True)
class ElectionSignal:
    chain_id: str
    epoch: int  # epoch the chain wants a committee for

    def encode(self) -> bytes:
        return enc_str(self.chain_id) + u64(self.epoch)


@dataclass(frozen=True)
class ElectionResult:
    chain_id: str
    epoch: int
    members: tuple[str, ...]
    first_height: int  # first block height the new committee will attest

    def encode(self) -> bytes:
        out = enc_str(self.chain_id) + u64(self.epoch) + u64(self.first_height)
        for m in self.members:
            out += enc_str(m)
        return out


@dataclass
class ElectionCoordinator:
    """Matches election signals to the first seed published after them.

    Signals and seeds are recorded with the root-chain height where they
    appeared; an election is ready once some seed's height is strictly
    greater than the signal's.
    """

    signals: dict[tuple[str, int], int] = field(default_factory=dict)
    seeds: list[tuple[int, Seed]] = field(default_factory=list)

    def record_signal(self, signal: ElectionSignal, root_height: int) -> bool:
        """Record the signal; duplicate signals for the same epoch are ignored."""
        key = (signal.chain_id, signal.epoch)
        if key in self.signals:
            return False
        self.signals[key] = root_height
        return True

    def record_seed(self, root_height: int, seed: Seed) -> None:
        self.seeds.append((root_height, seed))

    def ready_seed(self, chain_id: str, epoch: int) -> Optional[Seed]:
        key = (chain_id, epoch)
        if key not in self.signals:
            return None
        signal_height = self.signals[key]
        for height, seed in self.seeds:
            if height > signal_height:
                return seed
        return None


# ---------------------------------------------------------------------------
# Committee failure analytics


def _as_fraction(value: FractionLike) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        # Read floats decimally: 0.1 means 1/10, not its binary neighbor.
        return Fraction(str(value))
    return Fraction(value)


def malicious_count(total_nodes: int, malicious_fraction: FractionLike) -> int:
    """Number of malicious nodes: lambda*N rounded half-up."""
    exact = _as_fraction(malicious_fraction) * total_nodes
    return int(math.floor(exact + Fraction(1, 2)))


@dataclass(frozen=True)
class FailureParams:
    total_nodes: int  # N
    committee_size: int  # n
    committee_count: int  # m
    malicious_fraction: Fraction  # lambda
    tolerance: Fraction  # rho

    def __post_init__(self):
        lam = _as_fraction(self.malicious_fraction)
        rho = _as_fraction(self.tolerance)
        object.__setattr__(self, "malicious_fraction", lam)
        object.__setattr__(self, "tolerance", rho)
        if not 0 <= lam < 1:
            raise ValueError("malicious fraction must be in [0, 1)")
        if not 0 < rho < 1:
            raise ValueError("tolerance threshold must be in (0, 1)")
        if not 0 < self.committee_size <= self.total_nodes:
            raise ValueError("committee size must be in 1..N")
        if self.committee_count < 1:
            raise ValueError("committee count must be positive")


def failure_probability(params: FailureParams) -> Fraction:
    """Probability one committee draws more than tolerance*n malicious nodes.

    Hypergeometric tail, exact: sum over x from floor(rho*n)+1 to n of
    C(M, x) * C(N - M, n - x) / C(N, n), with M malicious among N.
    """
    big_n = params.total_nodes
    n = params.committee_size
    m_bad = malicious_count(big_n, params.malicious_fraction)
    threshold = int(params.tolerance * n)  # floor of an exact rational
    total = math.comb(big_n, n)
    bad = 0
    for x in range(threshold + 1, n + 1):
        bad += math.comb(m_bad, x) * math.comb(big_n - m_bad, n - x)
    return Fraction(bad, total)


def system_failure_bound(committee_count: int, p_single: FractionLike) -> Fraction:
    """Union bound over committees, clipped to 1."""
    p = _as_fraction(p_single)
    if not 0 <= p <= 1:
        raise ValueError("p_single must be a probability")
    return min(Fraction(1), committee_count * p)
