import math
from collections import Counter
from fractions import Fraction

import pytest
from scipy import stats

from thinkey.committee import (
    Committee,
    ElectionCoordinator,
    ElectionSignal,
    FailureParams,
    InsufficientNodes,
    Seed,
    StakeRegistry,
    elect,
    failure_probability,
    genesis_seed,
    malicious_count,
    next_seed,
    quorum_size,
    system_failure_bound,
)

from oracles import committee_failure_fraction


def registry_of(stakes: dict) -> StakeRegistry:
    reg = StakeRegistry()
    for node, stake in stakes.items():
        reg.register(node, stake)
    return reg


class TestSeeds:
    def test_genesis_reproducible(self):
        assert genesis_seed("a") == genesis_seed("a")
        assert genesis_seed("a") != genesis_seed("b")

    def test_chain_deterministic(self):
        s0 = genesis_seed("x")
        assert next_seed(s0) == next_seed(s0)
        assert next_seed(s0).epoch == 1

    def test_thousand_seeds_no_duplicates(self):
        seed = genesis_seed("collision-check")
        seen = {seed.value}
        for _ in range(1000):
            seed = next_seed(seed)
            assert seed.value not in seen
            seen.add(seed.value)

    def test_bit_distribution_sane(self):
        # Mean set-bit count over 1000 seeds should sit near 128; the 12-bit
        # tolerance is ~4.7 standard errors of binomial(256, 1/2)/sqrt(1000).
        seed = genesis_seed("bits")
        total = 0
        for _ in range(1000):
            seed = next_seed(seed)
            total += bin(int.from_bytes(seed.value, "big")).count("1")
        mean = total / 1000
        assert abs(mean - 128) < 12


class TestElection:
    def test_same_inputs_same_committee(self):
        reg = registry_of({f"n{i}": 10 for i in range(30)})
        seed = genesis_seed("e")
        a = elect(seed, "c0", reg, 7)
        b = elect(seed, "c0", reg, 7)
        assert a == b

    def test_chain_id_salts_selection(self):
        reg = registry_of({f"n{i}": 10 for i in range(30)})
        seed = genesis_seed("e")
        assert elect(seed, "c0", reg, 7).members != elect(seed, "c1", reg, 7).members

    def test_insufficient_nodes(self):
        reg = registry_of({"a": 5})
        with pytest.raises(InsufficientNodes):
            elect(genesis_seed("e"), "c0", reg, 2)

    def test_quorum_formula(self):
        assert quorum_size(13) == 9
        assert quorum_size(4) == 3
        assert quorum_size(3) == 3
        committee = Committee("c0", 0, ("a", "b", "c", "d"), quorum_size(4))
        assert committee.max_faulty() == 1
        assert committee.leader(0) == "a" and committee.leader(5) == "b"

    def test_equal_stakes_sample_uniformly(self):
        # Chi-square over 10,000 single-seat elections across 20 nodes.
        reg = registry_of({f"n{i:02d}": 10 for i in range(20)})
        counts = Counter()
        seed = genesis_seed("fairness")
        for _ in range(10_000):
            seed = next_seed(seed)
            counts[elect(seed, "c0", reg, 1).members[0]] += 1
        observed = [counts[f"n{i:02d}"] for i in range(20)]
        _, p_value = stats.chisquare(observed)
        assert p_value > 0.01

    def test_dominant_stake_wins_single_seat(self):
        stakes = {"whale": 9900}
        stakes.update({f"n{i}": 1 for i in range(100)})  # 1% between them
        reg = registry_of(stakes)
        seed = genesis_seed("whale")
        wins = 0
        for _ in range(10_000):
            seed = next_seed(seed)
            wins += elect(seed, "c0", reg, 1).members[0] == "whale"
        assert wins >= 9800

    def test_stake_proportional_within_three_sigma(self):
        # 3 nodes with stakes 1:2:3 drawing one seat 10,000 times.
        reg = registry_of({"a": 100, "b": 200, "c": 300})
        seed = genesis_seed("prop")
        counts = Counter()
        trials = 10_000
        for _ in range(trials):
            seed = next_seed(seed)
            counts[elect(seed, "c0", reg, 1).members[0]] += 1
        for node, share in (("a", 1 / 6), ("b", 2 / 6), ("c", 3 / 6)):
            se = math.sqrt(share * (1 - share) * trials)
            assert abs(counts[node] - share * trials) < 3 * se

    def test_consecutive_epochs_overlap_like_independent_draws(self):
        # Committees for distinct seeds should overlap like two independent
        # without-replacement samples: E = n^2/N.
        reg = registry_of({f"n{i:03d}": 10 for i in range(60)})
        seed = genesis_seed("overlap")
        n, trials, total = 12, 400, 0
        for _ in range(trials):
            a = set(elect(seed, "c0", reg, n).members)
            seed = next_seed(seed)
            b = set(elect(seed, "c0", reg, n).members)
            total += len(a & b)
            seed = next_seed(seed)
        expected = n * n / 60
        se = math.sqrt(trials * n * 0.2) / trials  # loose bound on the spread
        assert abs(total / trials - expected) < 4 * se

    def test_slash_burns_half_and_disqualifies_at_zero(self):
        reg = registry_of({"a": 100, "b": 7})
        assert reg.slash("a") == 50
        assert reg.entries["a"].stake == 50 and reg.burned == 50
        reg.slash("b")  # 3 burned
        assert reg.entries["b"].stake == 4
        assert reg.total_stake() + reg.burned == 107


class TestSignalFlow:
    def test_election_uses_first_seed_after_signal(self):
        coord = ElectionCoordinator()
        s1, s2 = genesis_seed("s1"), genesis_seed("s2")
        coord.record_seed(3, s1)
        coord.record_signal(ElectionSignal("c0", 1), root_height=3)
        assert coord.ready_seed("c0", 1) is None  # seed at height 3 is not after
        coord.record_seed(4, s2)
        assert coord.ready_seed("c0", 1) == s2

    def test_duplicate_signal_ignored(self):
        coord = ElectionCoordinator()
        assert coord.record_signal(ElectionSignal("c0", 1), 5)
        assert not coord.record_signal(ElectionSignal("c0", 1), 6)
        coord.record_seed(6, genesis_seed("x"))
        assert coord.ready_seed("c0", 1) is not None

    def test_two_chains_same_seed_different_committees(self):
        reg = registry_of({f"n{i}": 10 for i in range(40)})
        coord = ElectionCoordinator()
        coord.record_signal(ElectionSignal("c0", 1), 2)
        coord.record_signal(ElectionSignal("c1", 1), 2)
        seed = genesis_seed("shared")
        coord.record_seed(3, seed)
        sa = coord.ready_seed("c0", 1)
        sb = coord.ready_seed("c1", 1)
        assert sa == sb == seed
        assert elect(sa, "c0", reg, 8).members != elect(sb, "c1", reg, 8).members


class TestFailureProbability:
    def test_zero_malicious_gives_zero(self):
        p = failure_probability(FailureParams(20, 5, 1, Fraction(0), Fraction(1, 3)))
        assert p == 0

    def test_combinatorially_impossible_gives_zero(self):
        # 2 malicious among 20, committee of 8, threshold floor(0.5*8)=4:
        # more than 4 bad members cannot happen with only 2 bad nodes.
        p = failure_probability(FailureParams(20, 8, 1, Fraction(1, 10), Fraction(1, 2)))
        assert p == 0

    def test_matches_exhaustive_enumeration_n20(self):
        params = FailureParams(20, 5, 1, Fraction(1, 4), Fraction(1, 5))
        expected = committee_failure_fraction(
            total=20, committee=5, malicious=malicious_count(20, Fraction(1, 4)),
            threshold=int(Fraction(1, 5) * 5),
        )
        assert failure_probability(params) == expected

    def test_rounding_of_malicious_count(self):
        assert malicious_count(20, Fraction(1, 4)) == 5
        assert malicious_count(11, "0.1") == 1  # 1.1 rounds down
        assert malicious_count(15, "0.1") == 2  # 1.5 rounds half-up
        assert malicious_count(10, 0.25) == 3  # 2.5 rounds half-up

    def test_monotone_in_malicious_fraction_and_tolerance(self):
        lams = [Fraction(0), Fraction(1, 10), Fraction(1, 4), Fraction(2, 5)]
        ps = [failure_probability(FailureParams(18, 6, 1, lam, Fraction(1, 3)))
              for lam in lams]
        assert ps == sorted(ps)
        rhos = [Fraction(1, 5), Fraction(1, 3), Fraction(1, 2), Fraction(2, 3)]
        qs = [failure_probability(FailureParams(18, 6, 1, Fraction(1, 4), rho))
              for rho in rhos]
        assert qs == sorted(qs, reverse=True)

    def test_result_is_exact_fraction_in_unit_interval(self):
        p = failure_probability(FailureParams(24, 8, 1, Fraction(2, 5), Fraction(1, 3)))
        assert isinstance(p, Fraction)
        assert 0 <= p <= 1

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            FailureParams(10, 11, 1, Fraction(1, 4), Fraction(1, 3))
        with pytest.raises(ValueError):
            FailureParams(10, 5, 1, Fraction(3, 2), Fraction(1, 3))
        with pytest.raises(ValueError):
            FailureParams(10, 5, 0, Fraction(1, 4), Fraction(1, 3))


class TestSystemBound:
    def test_single_committee_is_identity(self):
        assert system_failure_bound(1, Fraction(1, 8)) == Fraction(1, 8)

    def test_zero_probability(self):
        assert system_failure_bound(16, 0) == 0

    def test_sixteen_committees_scale_and_clip(self):
        p = failure_probability(FailureParams(20, 5, 16, Fraction(1, 4), Fraction(1, 5)))
        assert system_failure_bound(16, p) == min(Fraction(1), 16 * p)
        assert system_failure_bound(10**9, Fraction(1, 2)) == 1

    def test_rejects_non_probability(self):
        with pytest.raises(ValueError):
            system_failure_bound(2, Fraction(3, 2))
