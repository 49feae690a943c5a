"""Payment workload generation.

Transactions are transfers between randomly drawn accounts. A transfer is
submitted on the payer's chain as a self-addressed signed message whose
execution withdraws the amount and emits a deposit to the payee; the file
row keeps the user-facing (from, to) pair. The cross-chain fraction is hit
exactly (round(ratio * tx_count) rows), positions shuffled.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Sequence

from .accounts import TRAN, Message, chain_of_address, sign_external
from .network import derive_seed


@dataclass(frozen=True)
class TxRecord:
    from_addr: str
    to_addr: str
    kind: str
    amount: int
    nonce: int
    sig: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "from": self.from_addr,
                "to": self.to_addr,
                "kind": self.kind,
                "amount": self.amount,
                "nonce": self.nonce,
                "sig": self.sig,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    def is_cross(self, shard_count: int) -> bool:
        return chain_of_address(self.from_addr, shard_count) != chain_of_address(
            self.to_addr, shard_count
        )


def tx_to_message(tx: TxRecord) -> Message:
    """The signed self-addressed withdrawal message a tx row stands for."""
    return Message(
        from_addr=tx.from_addr,
        to_addr=tx.from_addr,
        nonce=tx.nonce,
        kind=TRAN,
        args=(tx.to_addr, tx.amount),
        verification=bytes.fromhex(tx.sig),
    )


def make_accounts(count: int, shard_count: int) -> list[str]:
    """Sequential addresses, extended until every chain holds >= 2 accounts."""
    addresses: list[str] = []
    per_chain: dict[str, int] = {}
    i = 0
    while len(addresses) < count or (
        shard_count > 1 and min(per_chain.values(), default=0) < 2
    ) or len(per_chain) < shard_count:
        addr = f"a{i:05d}"
        addresses.append(addr)
        chain = chain_of_address(addr, shard_count)
        per_chain[chain] = per_chain.get(chain, 0) + 1
        i += 1
        if i > count + 100 * shard_count:
            raise RuntimeError("account generation failed to cover all chains")
    return addresses


def gen_workload(
    addresses: Sequence[str],
    tx_count: int,
    cross_chain_ratio: float,
    seed: int,
    shard_count: int,
    amount_range: tuple[int, int] = (1, 10),
    balance_payers: bool = False,
) -> list[TxRecord]:
    """Signed transfers with valid per-sender nonces and an exact cross count.

    balance_payers draws the payer's chain round-robin instead of letting the
    uniform account draw decide it, which equalizes per-shard load for
    throughput benchmarks.
    """
    if len(addresses) < 2:
        raise ValueError("need at least two accounts")
    rng = random.Random(derive_seed(seed, "workload"))
    by_chain: dict[str, list[str]] = {}
    for addr in addresses:
        by_chain.setdefault(chain_of_address(addr, shard_count), []).append(addr)
    chains = sorted(by_chain)
    cross_pool = {
        chain: [a for c, accts in by_chain.items() if c != chain for a in accts]
        for chain in by_chain
    }

    cross_total = round(cross_chain_ratio * tx_count)
    flags = [True] * cross_total + [False] * (tx_count - cross_total)
    rng.shuffle(flags)

    nonces: dict[str, int] = {}
    rows: list[TxRecord] = []
    for i, cross in enumerate(flags):
        if balance_payers:
            payer_chain = chains[i % len(chains)]
            pool0 = by_chain[payer_chain]
            payer = pool0[rng.randrange(len(pool0))]
        else:
            payer = addresses[rng.randrange(len(addresses))]
            payer_chain = chain_of_address(payer, shard_count)
        if cross:
            pool = cross_pool[payer_chain]
        else:
            pool = by_chain[payer_chain]
        payee = pool[rng.randrange(len(pool))]
        while payee == payer and len(pool) > 1:
            payee = pool[rng.randrange(len(pool))]  # self transfers only if forced
        amount = rng.randint(*amount_range)
        nonce = nonces.get(payer, 0)
        nonces[payer] = nonce + 1
        msg = sign_external(
            Message(payer, payer, nonce, TRAN, (payee, amount))
        )
        rows.append(
            TxRecord(payer, payee, TRAN, amount, nonce, msg.verification.hex())
        )
    return rows


def write_workload(rows: Sequence[TxRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(row.to_json() + "\n")


def read_workload(path: str) -> list[TxRecord]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            rows.append(
                TxRecord(
                    data["from"], data["to"], data["kind"], data["amount"],
                    data["nonce"], data["sig"],
                )
            )
    return rows
