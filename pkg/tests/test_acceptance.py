"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The heavyweight scenario
sweeps (throughput scaling, epoch grid, redelivery) are shared between
criteria through module-scoped fixtures; everything is deterministic, so
reruns reproduce identical numbers.
"""

import itertools
import math
import random
import statistics
import time
from fractions import Fraction

import numpy as np
import pytest

from thinkey.analysis import speedup
from thinkey.committee import FailureParams, failure_probability, malicious_count
from thinkey.consensus import BYZ_STRATEGIES, TimeoutConfig
from thinkey.network import gossip_broadcast, random_topology
from thinkey.runner import run_scenario
from thinkey.scenario import Scenario
from thinkey.accounts import validate_order

from consensus_harness import run_rounds
from oracles import random_sigma_instance, schedulable

ALL_RUNS = []  # RunResults collected for the conservation criterion


def _announce(name: str, ok: bool, detail: str, t0: float) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {name}: [{status}] {detail} ({time.time() - t0:.1f}s)")


# -- shared scenario sweeps -------------------------------------------------


@pytest.fixture(scope="module")
def tps_runs():
    runs = {}
    for shards in (1, 2, 4, 8):
        scenario = Scenario(
            seed=21, shard_count=shards, nodes_total=30 * (shards + 1),
            committee_size=13, epoch_rounds=100, run_rounds=40,
            tx_count=25_000 * shards,
            cross_chain_ratio=0.0 if shards == 1 else 0.2,
            block_size_limit=500, account_count=2000, balance_payers=True,
        )
        runs[shards] = run_scenario(scenario)
        ALL_RUNS.append(runs[shards])
    return runs


@pytest.fixture(scope="module")
def epoch_grid():
    grid = {}
    for shards in (2, 4, 8, 16, 32):
        for ratio in (0.0, 0.4, 0.8):
            scenario = Scenario(
                seed=31, shard_count=shards, nodes_total=200,
                committee_size=13, epoch_rounds=10, run_rounds=10,
                tx_count=2000 * shards, cross_chain_ratio=ratio,
                block_size_limit=450, externals_per_block=150,
                bytes_per_ms=600.0, account_count=max(2000, 4 * shards),
                balance_payers=True,
            )
            result = run_scenario(scenario)
            grid[(shards, ratio)] = result
            ALL_RUNS.append(result)
    return grid


@pytest.fixture(scope="module")
def redelivery_run():
    scenario = Scenario(
        seed=47, shard_count=4, nodes_total=120, committee_size=13,
        epoch_rounds=30, tx_count=10_000, cross_chain_ratio=0.5,
        block_size_limit=500, account_count=2000, redelivery=True,
    )
    result = run_scenario(scenario)
    ALL_RUNS.append(result)
    return result


# -- criteria ----------------------------------------------------------------


def test_criterion_01_tail_probability_exact_on_full_grid():
    t0 = time.time()
    lams = [Fraction(0), Fraction(1, 10), Fraction(1, 4), Fraction(2, 5)]
    rhos = [Fraction(1, 5), Fraction(1, 3)]
    points = 0
    for total in range(10, 25):
        for size in range(3, 9):
            combos = np.fromiter(
                itertools.chain.from_iterable(
                    itertools.combinations(range(total), size)
                ),
                dtype=np.int16,
            ).reshape(-1, size)
            denominator = math.comb(total, size)
            for lam in lams:
                bad = malicious_count(total, lam)
                bad_counts = (combos < bad).sum(axis=1)
                for rho in rhos:
                    threshold = int(rho * size)
                    enumerated = Fraction(
                        int((bad_counts > threshold).sum()), denominator
                    )
                    computed = failure_probability(
                        FailureParams(total, size, 1, lam, rho)
                    )
                    assert computed == enumerated, (total, size, lam, rho)
                    points += 1
    elapsed = time.time() - t0
    assert elapsed < 30.0, f"grid took {elapsed:.1f}s"
    _announce("1 eq4-exactness", True,
              f"{points} grid points exact in rational arithmetic", t0)


def test_criterion_02_consensus_safety_and_liveness():
    t0 = time.time()
    timeouts = TimeoutConfig(300.0, 350.0)
    members = [f"m{i:02d}" for i in range(13)]
    safety_violations = 0
    honest_leader_rounds = 0
    for seed in range(500):
        rng = random.Random(1000 + seed)
        chosen = rng.sample(members, 4)
        byz = {m: rng.choice(BYZ_STRATEGIES) for m in chosen}
        outcomes, _ = run_rounds(seed=1000 + seed, byzantine=byz,
                                 timeouts=timeouts)
        outcome = outcomes[0]
        if not outcome.safety_ok:
            safety_violations += 1
        for member, decision in outcome.decisions.items():
            if decision.early:
                assert decision.agreed and decision.block_hash is not None
        # Punishment soundness: only actual byzantine nodes get punished.
        assert {node for node, _ in outcome.punished} <= set(chosen)
        if "m00" not in byz:  # honest leader under bounded delay
            honest_leader_rounds += 1
            assert outcome.agreed, f"honest-leader round aborted at seed {seed}"
            assert outcome.t_end - outcome.t_start <= timeouts.budget_ms
    elapsed = time.time() - t0
    assert safety_violations == 0
    assert honest_leader_rounds > 300
    assert elapsed < 120.0, f"500 runs took {elapsed:.1f}s"
    _announce("2 consensus-safety-liveness", True,
              f"500 runs, 0 safety violations, {honest_leader_rounds} "
              f"honest-leader rounds all agreed within budget", t0)


def test_criterion_03_order_validation_matches_interleaving_search():
    t0 = time.time()
    rng = random.Random(424242)
    agreements = 0
    valid = 0
    for _ in range(10_000):
        procedures, input_ids = random_sigma_instance(rng)
        mine = validate_order(procedures, input_ids)
        oracle = schedulable(procedures, input_ids)
        assert mine == oracle
        agreements += 1
        valid += mine
    elapsed = time.time() - t0
    assert elapsed < 60.0, f"10000 instances took {elapsed:.1f}s"
    assert 1000 < valid < 9000  # both outcomes exercised
    _announce("3 order-oracle-equivalence", True,
              f"10000/10000 agreement ({valid} valid instances)", t0)


def test_criterion_04_tps_scales_with_shards(tps_runs):
    t0 = time.time()
    tps = {k: run.summary.tps for k, run in tps_runs.items()}
    for k, run in tps_runs.items():
        assert not run.violations, (k, run.violations)
    ordered = [tps[k] for k in (1, 2, 4, 8)]
    assert ordered == sorted(ordered), f"tps not monotone: {tps}"
    ratio = tps[8] / tps[1]
    assert ratio >= 6.0, f"tps(8)/tps(1) = {ratio:.2f}"
    _announce("4 tps-scaling", True,
              "tps " + ", ".join(f"{k}:{tps[k]:.0f}" for k in (1, 2, 4, 8))
              + f"; ratio {ratio:.2f} >= 6.0", t0)


def test_criterion_05_block_time_monotone_in_block_size():
    t0 = time.time()
    stats_by_size = {}
    for size in (100, 500, 1000, 2000):
        scenario = Scenario(
            seed=41, shard_count=1, nodes_total=40, committee_size=13,
            epoch_rounds=100, run_rounds=12, tx_count=size * 13,
            cross_chain_ratio=0.0, block_size_limit=size, account_count=500,
        )
        result = run_scenario(scenario)
        ALL_RUNS.append(result)
        assert not result.violations
        stats_by_size[size] = result.block_stats
    means = [stats_by_size[s]["mean_ms"] for s in (100, 500, 1000, 2000)]
    assert all(a < b for a, b in zip(means, means[1:])), means
    for size, stats in stats_by_size.items():
        assert stats["std_ms"] < 0.25 * stats["mean_ms"], (size, stats)
    _announce("5 block-time-monotone", True,
              "mean ms " + ", ".join(f"{s}:{stats_by_size[s]['mean_ms']:.0f}"
                                     for s in (100, 500, 1000, 2000)), t0)


def test_criterion_06_cross_chain_overhead(epoch_grid):
    t0 = time.time()
    epoch = {key: run.epoch_ms for key, run in epoch_grid.items()}
    for key, run in epoch_grid.items():
        assert not run.violations, (key, run.violations)
    shards_axis = (2, 4, 8, 16, 32)
    ratio_axis = (0.0, 0.4, 0.8)
    for ratio in ratio_axis:
        column = [epoch[(k, ratio)] for k in shards_axis]
        assert column == sorted(column), f"not monotone in shards at {ratio}: {column}"
    for k in shards_axis:
        row = [epoch[(k, r)] for r in ratio_axis]
        assert row == sorted(row), f"not monotone in ratio at {k} shards: {row}"
    overhead = epoch[(8, 0.8)] / epoch[(8, 0.0)]
    assert overhead < 1.5, f"ratio-0.8 overhead at 8 shards: {overhead:.2f}"
    _announce("6 cross-chain-overhead", True,
              f"8-shard overhead x{overhead:.2f} < 1.5; grid monotone "
              f"({epoch[(2, 0.0)]:.0f}..{epoch[(32, 0.8)]:.0f} ms)", t0)


def test_criterion_07_gossip_redundancy():
    t0 = time.time()
    means = {}
    for n in (100, 400, 1000):
        trials = []
        for trial in range(10):
            topology = random_topology(n, 10, seed=500 + trial, full_fanout=1)
            report = gossip_broadcast(topology, "n0000", b"M" * 128,
                                      seed=900 + trial)
            assert report.unreachable == ()
            trials.append(report.mean_full_copies)
        means[n] = statistics.fmean(trials)
        assert means[n] < 2.0, f"mean copies at n={n}: {means[n]:.3f}"
    spread = (max(means.values()) - min(means.values())) / min(means.values())
    assert spread < 0.10, f"size spread {spread:.3f}"
    _announce("7 gossip-redundancy", True,
              ", ".join(f"n={n}:{m:.3f}" for n, m in means.items())
              + f"; spread {spread * 100:.1f}%", t0)


def test_criterion_08_value_conserved_in_every_scenario(tps_runs, epoch_grid,
                                                        redelivery_run):
    t0 = time.time()
    # A byzantine scenario adds slashing burns to the mix.
    byz_scenario = Scenario(
        seed=53, shard_count=2, nodes_total=40, committee_size=13,
        epoch_rounds=8, tx_count=300, cross_chain_ratio=0.4,
        block_size_limit=25, account_count=40,
        byzantine=[["n0000", "equivocate_proposal"], ["n0001", "equivocate_vote"],
                   ["n0002", "silent"], ["n0003", "random_vote"]],
    )
    ALL_RUNS.append(run_scenario(byz_scenario))
    assert len(ALL_RUNS) >= 21
    for result in ALL_RUNS:
        assert result.final_total == result.genesis_total, result.scenario
        assert not [v for v in result.violations if v.code == "conservation"]
    _announce("8 conservation", True,
              f"{len(ALL_RUNS)} scenario runs ended at exactly the genesis "
              "total (balances + in-flight + stakes + burns)", t0)


def test_criterion_09_exactly_once_delivery_under_redelivery(redelivery_run):
    t0 = time.time()
    result = redelivery_run
    assert not result.violations, result.violations
    assert result.settled == 10_000
    executed = [r for r in result.relay_trace if r["executed_t"] is not None]
    assert len(executed) == len(result.relay_trace)  # all relays delivered
    ids = [r["msg_id"] for r in executed]
    assert len(ids) == len(set(ids))
    _announce("9 exactly-once-relays", True,
              f"{len(ids)} relay ids executed exactly once with adversarial "
              "redelivery enabled", t0)


def test_criterion_10_speedup_formula():
    t0 = time.time()
    assert speedup(0.5, 16, 4, "sqrt") == 3.2
    for k in (4.0, 16.0, 256.0):
        for r in (1.0, 2.0, 4.0):
            if r > k:
                continue
            by_p = [speedup(p, k, r, "sqrt") for p in (0, 0.25, 0.5, 0.75, 1)]
            assert by_p == sorted(by_p)
    for p in (0, 0.25, 0.5, 0.75, 1):
        for r in (1.0, 2.0, 4.0):
            by_k = [speedup(p, k, r, "sqrt") for k in (4.0, 16.0, 256.0)]
            assert by_k == sorted(by_k)
    # Curve ordering by p at sampled r, both gain functions and budgets.
    for k in (16.0, 256.0):
        for f, r_lo in (("sqrt", 1.0), ("log", 3.0)):
            for i in range(9):
                r = r_lo + i * (k - r_lo) / 8
                by_p = [speedup(p, k, r, f) for p in (0.1, 0.4, 0.7, 1.0)]
                for lo, hi in zip(by_p, by_p[1:]):
                    assert hi >= lo * (1 - 1e-12)
    _announce("10 speedup-formula", True,
              "speedup(0.5,16,4,sqrt) == 3.2 exactly; monotonicity and "
              "curve ordering hold on the full grid", t0)
