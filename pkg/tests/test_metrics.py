"""Metric computations against an independent brute-force recount oracle."""

from __future__ import annotations

import random

import pytest

from fsrm.errors import EmptyStratum, NotHybridRun, SampleSetMismatch, ZeroSlowTokens
from fsrm.judge import Label
from fsrm.metrics import (
    ALL,
    StratumKey,
    accuracy,
    delta_vs_slow,
    fast_rate,
    stratum_reports,
    token_savings,
)
from fsrm.router import JudgmentRecord, Mode


def record(
    sample_id,
    mode=Mode.HYBRID,
    domain="chat",
    difficulty=None,
    correct=True,
    activated=False,
    tokens=1,
    error=None,
):
    return JudgmentRecord(
        sample_id=sample_id,
        mode=mode,
        domain=domain,
        difficulty=difficulty,
        final_verdict=None if error else Label.A,
        activated_slow=activated if mode is not Mode.FAST else False,
        completion_tokens=tokens,
        correct=correct,
        error=error,
    )


def random_paired_runs(rng, n=None):
    """A hybrid run and its paired slow run over the same ids."""
    n = n or rng.randint(4, 80)
    domains = ["chat", "math", "safety"]
    hybrid, slow = [], []
    for i in range(n):
        domain = rng.choice(domains)
        slow_tokens = rng.randint(5, 900)
        activated = rng.random() < rng.random()
        hybrid.append(
            record(
                f"s{i}", domain=domain, activated=activated,
                tokens=1 + slow_tokens if activated else 1,
                correct=rng.random() < 0.8,
            )
        )
        slow.append(
            record(
                f"s{i}", mode=Mode.SLOW, domain=domain, activated=True,
                tokens=slow_tokens, correct=rng.random() < 0.85,
            )
        )
    return hybrid, slow


class TestAccuracy:
    def test_simple_fraction(self):
        records = [record(f"s{i}", correct=i < 3) for i in range(4)]
        assert accuracy(records) == pytest.approx(0.75)

    def test_errors_count_incorrect(self):
        records = [
            record(f"s{i}", correct=False, error="BackendUnavailable: down") for i in range(3)
        ]
        assert accuracy(records) == 0.0

    def test_empty_stratum(self):
        with pytest.raises(EmptyStratum):
            accuracy([], ALL)
        with pytest.raises(EmptyStratum):
            accuracy([record("s0")], StratumKey(domain="nope"))


class TestFastRate:
    def test_simple_fraction(self):
        records = [record(f"s{i}", activated=i == 0) for i in range(4)]
        assert fast_rate(records) == pytest.approx(0.75)

    def test_all_activated(self):
        records = [record(f"s{i}", activated=True, tokens=10) for i in range(4)]
        assert fast_rate(records) == 0.0

    def test_rejects_non_hybrid(self):
        records = [record("s0"), record("s1", mode=Mode.FAST)]
        with pytest.raises(NotHybridRun):
            fast_rate(records)

    def test_recount_on_large_run(self):
        rng = random.Random(0)
        hybrid, _ = random_paired_runs(rng, n=1000)
        expected = sum(1 for r in hybrid if not r.activated_slow) / len(hybrid)
        assert fast_rate(hybrid) == pytest.approx(expected, abs=1e-15)


class TestTokenSavings:
    def test_formula(self):
        hybrid = [record("s0", tokens=600, activated=True)]
        slow = [record("s0", mode=Mode.SLOW, tokens=1000)]
        assert token_savings(hybrid, slow) == pytest.approx(0.4)

    def test_total_activation_goes_negative(self):
        n, slow_total = 100, 50_000
        per_slow = slow_total // n
        hybrid = [record(f"s{i}", activated=True, tokens=1 + per_slow) for i in range(n)]
        slow = [record(f"s{i}", mode=Mode.SLOW, tokens=per_slow) for i in range(n)]
        assert token_savings(hybrid, slow) == pytest.approx(-n / slow_total, abs=1e-12)

    def test_sample_set_mismatch(self):
        with pytest.raises(SampleSetMismatch):
            token_savings([record("s0", tokens=3)], [record("s1", mode=Mode.SLOW, tokens=3)])

    def test_zero_slow_tokens(self):
        hybrid = [record("s0", tokens=1)]
        slow = [record("s0", mode=Mode.SLOW, tokens=0, error="x", correct=False)]
        with pytest.raises(ZeroSlowTokens):
            token_savings(hybrid, slow)


class TestDeltaVsSlow:
    def test_points(self):
        hybrid = [record(f"s{i}", correct=i < 92, tokens=1) for i in range(100)]
        slow = [
            record(f"s{i}", mode=Mode.SLOW, correct=i < 91, tokens=10) for i in range(100)
        ]
        assert delta_vs_slow(hybrid, slow) == pytest.approx(1.0)

    def test_identical_runs_give_zero(self):
        hybrid, slow = random_paired_runs(random.Random(3))
        mirrored = [
            record(r.sample_id, mode=Mode.SLOW, domain=r.domain, correct=r.correct, tokens=5)
            for r in hybrid
        ]
        assert delta_vs_slow(hybrid, mirrored) == pytest.approx(0.0, abs=1e-12)


class TestRecountOracle:
    def test_metrics_match_brute_force(self):
        rng = random.Random(42)
        for _ in range(100):
            hybrid, slow = random_paired_runs(rng)
            # Brute-force recount with plain loops, independent of the module.
            n = 0
            n_correct = 0
            n_fast_only = 0
            hybrid_tokens = 0
            slow_tokens = 0
            for r in hybrid:
                n += 1
                if r.correct:
                    n_correct += 1
                if not r.activated_slow:
                    n_fast_only += 1
                hybrid_tokens += r.completion_tokens
            for r in slow:
                slow_tokens += r.completion_tokens

            assert abs(accuracy(hybrid) - n_correct / n) <= 1e-12
            assert abs(fast_rate(hybrid) - n_fast_only / n) <= 1e-12
            assert abs(token_savings(hybrid, slow) - (1 - hybrid_tokens / slow_tokens)) <= 1e-12

    def test_weighted_mean_identity(self):
        rng = random.Random(7)
        hybrid, _ = random_paired_runs(rng, n=500)
        domains = {r.domain for r in hybrid}
        weighted = 0.0
        for domain in domains:
            key = StratumKey(domain=domain)
            count = sum(1 for r in hybrid if key.matches(r))
            weighted += fast_rate(hybrid, key) * count
        assert fast_rate(hybrid, ALL) == pytest.approx(weighted / len(hybrid), abs=1e-12)


class TestStratumReports:
    def test_domain_and_difficulty_rows(self):
        records = [
            record("s0", domain="chat", difficulty="easy"),
            record("s1", domain="math", difficulty="hard", correct=False),
            record("s2", domain="math", difficulty="easy"),
        ]
        reports = stratum_reports(records)
        described = [r.key.describe() for r in reports]
        assert described == ["all", "chat", "math", "easy", "hard"]
        by_name = {r.key.describe(): r for r in reports}
        assert by_name["math"].n == 2
        assert by_name["math"].accuracy == pytest.approx(0.5)
        assert by_name["easy"].n == 2

    def test_fast_rate_omitted_for_fast_runs(self):
        records = [record("s0", mode=Mode.FAST)]
        reports = stratum_reports(records)
        assert reports[0].fast_rate is None
        assert reports[0].token_savings is None

    def test_order_invariance(self):
        rng = random.Random(11)
        hybrid, slow = random_paired_runs(rng, n=60)
        base = stratum_reports(hybrid, slow)
        shuffled_h = hybrid[:]
        shuffled_s = slow[:]
        rng.shuffle(shuffled_h)
        rng.shuffle(shuffled_s)
        assert stratum_reports(shuffled_h, shuffled_s) == base
