"""Independent oracles used by the test suite.

These deliberately avoid the library's own algorithms: the interleaving
search executes procedures token by token with backtracking, and the
committee-failure oracle counts explicit node subsets.
"""

from __future__ import annotations

import itertools
import random
from fractions import Fraction

import numpy as np

from thinkey.accounts import ProcessingProcedure, Step


def schedulable(procedures, input_ids) -> bool:
    """Backtracking search for a global interleaving of procedure steps.

    A step (recv m : emits) is enabled when m is an unconsumed available
    token; executing it consumes m and makes its emissions available. The
    order is valid iff some interleaving executes every step.
    """
    sequences = [list(p.steps) for p in procedures]
    positions = tuple(0 for _ in sequences)
    available0 = frozenset(input_ids)

    seen: set[tuple] = set()

    def search(positions, available) -> bool:
        if all(
            positions[i] == len(sequences[i]) for i in range(len(sequences))
        ):
            return True
        key = (positions, available)
        if key in seen:
            return False
        seen.add(key)
        for i, seq in enumerate(sequences):
            pos = positions[i]
            if pos == len(seq):
                continue
            step = seq[pos]
            if step.received in available:
                next_positions = tuple(
                    p + 1 if j == i else p for j, p in enumerate(positions)
                )
                next_available = (available - {step.received}) | set(step.emitted)
                if search(next_positions, frozenset(next_available)):
                    return True
        return False

    return search(positions, available0)


def random_sigma_instance(rng: random.Random):
    """A random (procedures, input_ids) pair over <= 4 accounts, <= 8 messages.

    Messages are relays wired between random (account, step) slots; a
    shuffle of per-account step orders makes both valid and cyclic orders
    common. Some instances receive unknown ids or duplicate receives.
    """
    n_accounts = rng.randint(1, 4)
    accounts = [f"x{i}" for i in range(n_accounts)]
    n_msgs = rng.randint(1, 8)
    ids = [bytes([200 + i]) * 4 for i in range(n_msgs)]

    n_inputs = rng.randint(1, n_msgs)
    input_ids = ids[:n_inputs]
    relay_ids = ids[n_inputs:]

    receiver = {m: rng.choice(accounts) for m in ids}
    steps_by_account = {a: [] for a in accounts}
    for m in ids:
        steps_by_account[receiver[m]].append([m, []])

    # Each relay is emitted from some step of a random account.
    for m in relay_ids:
        emitter = rng.choice(accounts)
        if steps_by_account[emitter]:
            step = rng.choice(steps_by_account[emitter])
            step[1].append(m)
        else:
            input_ids.append(m)  # no step to emit from: make it an input

    for steps in steps_by_account.values():
        rng.shuffle(steps)

    # Occasional malformed instances exercise the reject paths.
    roll = rng.random()
    if roll < 0.05:
        victim = rng.choice(accounts)
        steps_by_account[victim].append([bytes([99]) * 4, []])  # unknown id
    elif roll < 0.10 and n_msgs > 1:
        victim = rng.choice(accounts)
        steps_by_account[victim].append([rng.choice(ids), []])  # duplicate recv

    procedures = [
        ProcessingProcedure(
            account,
            tuple(Step(m, tuple(emits)) for m, emits in steps),
        )
        for account, steps in steps_by_account.items()
        if steps
    ]
    return procedures, input_ids


def committee_failure_fraction(total, committee, malicious, threshold) -> Fraction:
    """Exact failed-committee fraction by enumerating every node subset.

    Nodes 0..malicious-1 are the bad ones; a committee fails when it holds
    strictly more than `threshold` of them. numpy only batches the counting;
    the enumeration itself is explicit.
    """
    combos = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(total), committee)),
        dtype=np.int16,
    ).reshape(-1, committee)
    bad_counts = (combos < malicious).sum(axis=1)
    failed = int((bad_counts > threshold).sum())
    import math

    return Fraction(failed, math.comb(total, committee))
