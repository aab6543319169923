"""Routing: fast/slow/hybrid judging, strategies, and accounting identities."""

from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsrm.backends import ScoreResponse
from fsrm.confidence import ConfidencePair, ThresholdPair
from fsrm.errors import BackendUnavailable, BothLabelsAbsent
from fsrm.judge import Label, PreferenceSample
from fsrm.router import (
    NO_VERDICT,
    JudgmentRecord,
    Mode,
    Strategy,
    judge_fast,
    judge_hybrid,
    judge_slow,
    label_distribution,
    route_strategy,
)

INF_THRESHOLDS = ThresholdPair(math.inf, math.inf)
ZERO_THRESHOLDS = ThresholdPair(0.0, 0.0)


def score(entries, first=None):
    entries = tuple(entries)
    return ScoreResponse(
        first_token_text=first or entries[0][0], top_logprobs=entries, model_id="t"
    )


class TestLabelDistribution:
    def test_sums_surface_forms(self):
        response = score(
            [("A", math.log(0.5)), (" A", math.log(0.2)), ("B", math.log(0.2)),
             ("tie", math.log(0.05)), ("x", math.log(0.01))]
        )
        dist = label_distribution(response)
        assert dist.p_a == pytest.approx(0.7)
        assert dist.p_b == pytest.approx(0.2)
        assert [tok for tok, _ in dist.off_candidate_logprobs] == ["tie", "x"]

    def test_both_labels_absent(self):
        response = score([("tie", math.log(0.9)), (".", math.log(0.05))])
        with pytest.raises(BothLabelsAbsent):
            label_distribution(response)

    def test_single_label_present_is_fine(self):
        response = score([("A", math.log(0.9)), ("tie", math.log(0.05))])
        dist = label_distribution(response)
        assert dist.p_b == 0.0


class _ScriptedBackend:
    """Returns canned responses; used to force specific router paths."""

    model_id = "scripted"

    def __init__(self, score_response=None, gen_text=None, gen_tokens=100,
                 score_error=None, gen_error=None):
        self.score_response = score_response
        self.gen_text = gen_text
        self.gen_tokens = gen_tokens
        self.score_error = score_error
        self.gen_error = gen_error
        self.generate_calls = 0

    def score_first_token(self, prompt, n_logprobs):
        if self.score_error:
            raise self.score_error
        return self.score_response

    def generate(self, prompt, params):
        from fsrm.backends import GenResponse

        self.generate_calls += 1
        if self.gen_error:
            raise self.gen_error
        return GenResponse(
            text=self.gen_text, completion_tokens=self.gen_tokens, model_id=self.model_id
        )


def one_sample(gold=Label.A) -> PreferenceSample:
    return PreferenceSample(
        id="s1", domain="chat", prompt="q", response_a="a", response_b="b", gold=gold
    )


class TestJudgeFast:
    def test_argmax_verdict(self):
        backend = _ScriptedBackend(
            score(
                [("A", math.log(0.7)), ("B", math.log(0.2)), ("tie", math.log(0.05)),
                 ("x", math.log(0.01))]
            )
        )
        record = judge_fast(one_sample(), backend)
        assert record.fast_verdict is Label.A
        assert record.final_verdict is Label.A
        assert record.completion_tokens == 1
        assert record.correct is True
        assert record.mode is Mode.FAST
        assert not record.activated_slow

    def test_exact_tie_breaks_to_a(self):
        half = math.log(0.4)
        backend = _ScriptedBackend(score([("A", half), ("B", half), ("tie", math.log(0.1))]))
        record = judge_fast(one_sample(gold=Label.B), backend)
        assert record.fast_verdict is Label.A
        assert record.correct is False

    def test_greedy_tie_token_does_not_pick_verdict(self):
        backend = _ScriptedBackend(
            score(
                [("tie", math.log(0.5)), ("B", math.log(0.3)), ("A", math.log(0.1))]
            )
        )
        record = judge_fast(one_sample(gold=Label.B), backend)
        assert record.fast_token.value == "tie"
        assert record.fast_verdict is Label.B

    def test_both_labels_absent_recorded(self):
        backend = _ScriptedBackend(score([("tie", math.log(0.9)), (".", math.log(0.05))]))
        record = judge_fast(one_sample(), backend)
        assert record.error is not None and "BothLabelsAbsent" in record.error
        assert record.correct is False
        assert record.final_verdict is None

    def test_backend_error_recorded(self):
        backend = _ScriptedBackend(score_error=BackendUnavailable("down"))
        record = judge_fast(one_sample(), backend)
        assert "BackendUnavailable" in record.error
        assert record.correct is False

    def test_confidences_populated(self):
        backend = _ScriptedBackend(
            score([("A", math.log(0.6)), ("B", math.log(0.3)), ("tie", -14.0), ("x", -16.0)])
        )
        record = judge_fast(one_sample(), backend, k=2)
        assert record.confidences.c_intuition == pytest.approx(0.3)
        assert record.confidences.c_token == pytest.approx(15.0)
        assert not record.short_pool

    def test_short_pool_flag_set(self):
        backend = _ScriptedBackend(
            score([("A", math.log(0.6)), ("B", math.log(0.3)), ("tie", -14.0)])
        )
        record = judge_fast(one_sample(), backend, k=5)
        assert record.short_pool


class TestJudgeSlow:
    def test_verdict_and_tokens(self):
        backend = _ScriptedBackend(gen_text="<think>close call</think>\nA", gen_tokens=312)
        record = judge_slow(one_sample(), backend)
        assert record.final_verdict is Label.A
        assert record.completion_tokens == 312
        assert record.format_ok is True
        assert record.activated_slow
        assert record.mode is Mode.SLOW

    def test_noncommittal_records_no_verdict(self):
        backend = _ScriptedBackend(gen_text="Honestly it depends.", gen_tokens=57)
        record = judge_slow(one_sample(), backend)
        assert record.error == NO_VERDICT
        assert record.correct is False
        assert record.final_verdict is None
        assert record.completion_tokens == 57  # tokens still count

    def test_trailing_verdict_without_format(self):
        backend = _ScriptedBackend(gen_text="ran out of budget but B", gen_tokens=8192)
        record = judge_slow(one_sample(gold=Label.B), backend)
        assert record.final_verdict is Label.B
        assert record.format_ok is False
        assert record.correct is True


class TestRouteStrategy:
    THRESHOLDS = ThresholdPair(0.642, 15.108)

    def test_rule_decomposition(self):
        conf = ConfidencePair(0.3, 20.0)
        assert route_strategy(conf, Strategy.DUAL, self.THRESHOLDS) is False
        assert route_strategy(conf, Strategy.INTUITION_ONLY, self.THRESHOLDS) is True
        assert route_strategy(conf, Strategy.TOKEN_ONLY, self.THRESHOLDS) is False

    @given(st.floats(0, 1), st.floats(0, 50))
    def test_zero_thresholds_never_activate(self, ci, ct):
        conf = ConfidencePair(ci, ct)
        for strategy in Strategy:
            assert route_strategy(conf, strategy, ZERO_THRESHOLDS) is False

    @given(st.floats(0, 1), st.floats(0, 50))
    def test_infinite_thresholds_always_activate(self, ci, ct):
        conf = ConfidencePair(ci, ct)
        for strategy in Strategy:
            assert route_strategy(conf, strategy, INF_THRESHOLDS) is True

    def test_dual_matches_conjunction_of_singles(self):
        for ci in (0.1, 0.642, 0.9):
            for ct in (10.0, 15.108, 20.0):
                conf = ConfidencePair(ci, ct)
                assert route_strategy(conf, Strategy.DUAL, self.THRESHOLDS) == (
                    route_strategy(conf, Strategy.INTUITION_ONLY, self.THRESHOLDS)
                    and route_strategy(conf, Strategy.TOKEN_ONLY, self.THRESHOLDS)
                )


def fast_like_score(ci=0.1, ct=5.0):
    label_mass = 1 - 22 * math.exp(-ct)
    p_a = (label_mass + ci) / 2
    p_b = (label_mass - ci) / 2
    entries = [("A", math.log(p_a)), ("B", math.log(p_b))]
    entries.extend((f"t{i}", -ct) for i in range(22))
    entries.sort(key=lambda e: e[1], reverse=True)
    return score(entries)


class TestJudgeHybrid:
    def test_confident_fast_short_circuits(self):
        backend = _ScriptedBackend(fast_like_score(ci=0.9, ct=20.0), gen_text="<think>x</think>\nB")
        record = judge_hybrid(one_sample(), backend, ThresholdPair(0.642, 15.108))
        assert not record.activated_slow
        assert record.completion_tokens == 1
        assert record.final_verdict == record.fast_verdict
        assert backend.generate_calls == 0

    def test_uncertain_fast_activates_slow(self):
        backend = _ScriptedBackend(
            fast_like_score(ci=0.1, ct=5.0), gen_text="<think>x</think>\nB", gen_tokens=200
        )
        record = judge_hybrid(one_sample(gold=Label.B), backend, ThresholdPair(0.642, 15.108))
        assert record.activated_slow
        assert record.final_verdict is Label.B
        assert record.completion_tokens == 201
        assert record.correct is True

    def test_slow_no_verdict_falls_back_to_fast(self):
        backend = _ScriptedBackend(
            fast_like_score(ci=0.1, ct=5.0), gen_text="cannot say", gen_tokens=30
        )
        record = judge_hybrid(one_sample(), backend, INF_THRESHOLDS)
        assert record.parse_fallback
        assert record.final_verdict == record.fast_verdict
        assert record.error is None
        assert record.completion_tokens == 31

    def test_no_fallback_keeps_error(self):
        backend = _ScriptedBackend(
            fast_like_score(ci=0.1, ct=5.0), gen_text="cannot say", gen_tokens=30
        )
        record = judge_hybrid(one_sample(), backend, INF_THRESHOLDS, fallback_to_fast=False)
        assert record.error == NO_VERDICT
        assert record.final_verdict is None
        assert record.correct is False

    def test_fast_failure_aborts_without_slow_pass(self):
        backend = _ScriptedBackend(score_error=BackendUnavailable("down"),
                                   gen_text="<think>x</think>\nA")
        record = judge_hybrid(one_sample(), backend, INF_THRESHOLDS)
        assert record.error is not None
        assert backend.generate_calls == 0

    def test_slow_backend_failure_recorded(self):
        backend = _ScriptedBackend(
            fast_like_score(ci=0.1, ct=5.0), gen_error=BackendUnavailable("mid-run")
        )
        record = judge_hybrid(one_sample(), backend, INF_THRESHOLDS)
        assert "BackendUnavailable" in record.error
        assert record.final_verdict is None


class TestThresholdCornerEquivalence:
    def test_zero_thresholds_reproduce_fast(self, small_world):
        samples, backend = small_world
        for sample in samples:
            hybrid = judge_hybrid(sample, backend, ZERO_THRESHOLDS)
            fast = judge_fast(sample, backend)
            assert hybrid.final_verdict == fast.final_verdict
            assert hybrid.completion_tokens == 1

    def test_infinite_thresholds_reproduce_slow(self, small_world):
        samples, backend = small_world
        for sample in samples:
            hybrid = judge_hybrid(sample, backend, INF_THRESHOLDS)
            slow = judge_slow(sample, backend)
            assert hybrid.final_verdict == slow.final_verdict
            assert hybrid.completion_tokens == slow.completion_tokens + 1

    def test_token_accounting_identity(self, small_world):
        samples, backend = small_world
        thresholds = ThresholdPair(0.6, 14.0)
        records = [judge_hybrid(s, backend, thresholds) for s in samples]
        slow_total = sum(
            r.completion_tokens - 1 for r in records if r.activated_slow
        )
        assert sum(r.completion_tokens for r in records) == len(samples) + slow_total


class TestActivationMonotonicity:
    @settings(max_examples=60)
    @given(
        st.lists(
            st.tuples(st.floats(0, 1), st.floats(0, 30)), min_size=1, max_size=50
        ),
        st.floats(0, 1), st.floats(0, 30),
        st.floats(0, 0.5), st.floats(0, 10),
    )
    def test_raising_thresholds_grows_activated_set(self, pop, ti, tt, di, dt):
        confs = [ConfidencePair(ci, ct) for ci, ct in pop]
        low = ThresholdPair(ti, tt)
        high = ThresholdPair(ti + di, tt + dt)
        low_set = {i for i, c in enumerate(confs) if route_strategy(c, Strategy.DUAL, low)}
        high_set = {i for i, c in enumerate(confs) if route_strategy(c, Strategy.DUAL, high)}
        assert low_set <= high_set


class TestRecordSerialization:
    def test_round_trip(self, small_world):
        samples, backend = small_world
        records = [judge_hybrid(s, backend, ThresholdPair(0.6, 14.0)) for s in samples]
        for record in records:
            again = JudgmentRecord.from_json_line(record.to_json_line())
            assert again == record

    def test_round_trip_of_errored_record(self):
        backend = _ScriptedBackend(score_error=BackendUnavailable("down"))
        record = judge_fast(one_sample(), backend)
        assert JudgmentRecord.from_json_line(record.to_json_line()) == record
