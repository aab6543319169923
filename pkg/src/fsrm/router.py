"""Fast/slow/hybrid routing: one judged record per preference sample.

Every sample first gets a single-forward-pass judgment from the first-token
distribution.  In hybrid mode the dual-confidence rule then decides whether to
pay for a chain-of-thought pass; the trigger-augmented prompt forces the model
past its fast judgment.  The emitted :class:`JudgmentRecord` is self-contained
(it carries stratum tags and the gold label) so metrics, reports, and offline
threshold sweeps can be recomputed from persisted records alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

from .backends import Backend, SamplingParams, ScoreResponse
from .confidence import (
    DEFAULT_CONFIDENCE_K,
    ConfidencePair,
    LabelDistribution,
    ThresholdPair,
    intuition_confidence,
    should_activate_slow,
    token_confidence,
)
from .errors import BothLabelsAbsent, FsrmError, UnparseableFastToken
from .judge import (
    DEFAULT_LABEL_SETS,
    DEFAULT_TRIGGER,
    FastToken,
    Label,
    LabelTokenSets,
    PreferenceSample,
    augment_with_trigger,
    build_judge_prompt,
    parse_fast_token,
    parse_slow_transcript,
)

NO_VERDICT = "NoVerdict"


class Mode(str, Enum):
    FAST = "fast"
    SLOW = "slow"
    HYBRID = "hybrid"


class Strategy(str, Enum):
    """Which confidence signals gate slow-thinking activation."""

    DUAL = "dual"
    INTUITION_ONLY = "intuition_only"
    TOKEN_ONLY = "token_only"


@dataclass
class JudgmentRecord:
    """One routed decision, with enough context to recompute every metric."""

    sample_id: str
    mode: Mode
    domain: str
    difficulty: str | None = None
    gold: Label | None = None
    fast_token: FastToken | None = None
    fast_verdict: Label | None = None
    confidences: ConfidencePair | None = None
    short_pool: bool = False
    activated_slow: bool = False
    slow_verdict: Label | None = None
    final_verdict: Label | None = None
    completion_tokens: int = 0
    format_ok: bool | None = None
    parse_fallback: bool = False
    correct: bool | None = None
    error: str | None = None

    def __post_init__(self) -> None:
        if self.mode is Mode.FAST and self.activated_slow:
            raise ValueError("fast-mode records cannot activate slow thinking")
        if self.completion_tokens < 0:
            raise ValueError("completion_tokens must be >= 0")
        if self.final_verdict is None and self.error is None and self.completion_tokens:
            raise ValueError("final_verdict may be absent only on errored records")

    def to_json_line(self) -> str:
        payload = {
            "sample_id": self.sample_id,
            "mode": self.mode.value,
            "domain": self.domain,
            "difficulty": self.difficulty,
            "gold": self.gold.value if self.gold else None,
            "fast_token": self.fast_token.value if self.fast_token else None,
            "fast_verdict": self.fast_verdict.value if self.fast_verdict else None,
            "confidences": (
                {
                    "c_intuition": self.confidences.c_intuition,
                    "c_token": self.confidences.c_token,
                }
                if self.confidences
                else None
            ),
            "short_pool": self.short_pool,
            "activated_slow": self.activated_slow,
            "slow_verdict": self.slow_verdict.value if self.slow_verdict else None,
            "final_verdict": self.final_verdict.value if self.final_verdict else None,
            "completion_tokens": self.completion_tokens,
            "format_ok": self.format_ok,
            "parse_fallback": self.parse_fallback,
            "correct": self.correct,
            "error": self.error,
        }
        return json.dumps(payload, ensure_ascii=False)

    @classmethod
    def from_json_line(cls, line: str) -> "JudgmentRecord":
        data = json.loads(line)

        def label(value: str | None) -> Label | None:
            return Label(value) if value is not None else None

        conf = data.get("confidences")
        return cls(
            sample_id=data["sample_id"],
            mode=Mode(data["mode"]),
            domain=data["domain"],
            difficulty=data.get("difficulty"),
            gold=label(data.get("gold")),
            fast_token=FastToken(data["fast_token"]) if data.get("fast_token") else None,
            fast_verdict=label(data.get("fast_verdict")),
            confidences=(
                ConfidencePair(conf["c_intuition"], conf["c_token"]) if conf else None
            ),
            short_pool=bool(data.get("short_pool", False)),
            activated_slow=bool(data["activated_slow"]),
            slow_verdict=label(data.get("slow_verdict")),
            final_verdict=label(data.get("final_verdict")),
            completion_tokens=int(data["completion_tokens"]),
            format_ok=data.get("format_ok"),
            parse_fallback=bool(data.get("parse_fallback", False)),
            correct=data.get("correct"),
            error=data.get("error"),
        )


def label_distribution(
    score: ScoreResponse, label_sets: LabelTokenSets = DEFAULT_LABEL_SETS
) -> LabelDistribution:
    """Fold a scoring response into label probabilities plus the off-candidate pool.

    Probabilities are summed over each label's surface forms; everything else
    (including 'tie') stays in the pool, sorted descending by logprob.
    """
    p_a = 0.0
    p_b = 0.0
    seen_label = False
    off: list[tuple[str, float]] = []
    for token, logprob in score.top_logprobs:
        if token in label_sets.a_forms:
            p_a += math.exp(logprob)
            seen_label = True
        elif token in label_sets.b_forms:
            p_b += math.exp(logprob)
            seen_label = True
        else:
            off.append((token, logprob))
    if not seen_label:
        raise BothLabelsAbsent("no candidate-label surface form in the returned logprobs")
    off.sort(key=lambda item: item[1], reverse=True)
    return LabelDistribution(p_a=p_a, p_b=p_b, off_candidate_logprobs=tuple(off))


def _new_record(sample: PreferenceSample, mode: Mode) -> JudgmentRecord:
    return JudgmentRecord(
        sample_id=sample.id,
        mode=mode,
        domain=sample.domain,
        difficulty=sample.difficulty,
        gold=sample.gold,
    )


def judge_fast(
    sample: PreferenceSample,
    backend: Backend,
    label_sets: LabelTokenSets = DEFAULT_LABEL_SETS,
    *,
    k: int = DEFAULT_CONFIDENCE_K,
    n_logprobs: int | None = None,
    template: str | None = None,
    mode: Mode = Mode.FAST,
) -> JudgmentRecord:
    """Single-forward-pass judgment from the first-token distribution.

    The verdict is the argmax over the two label masses (exact ties resolve
    to A, deterministically).  Costs exactly one completion token.  Backend
    failures land in ``record.error`` instead of propagating.
    """
    record = _new_record(sample, mode)
    try:
        prompt = build_judge_prompt(sample, template)
        # Request headroom beyond k: the label surface forms returned by the
        # backend do not count toward the off-candidate pool.
        score = backend.score_first_token(prompt, n_logprobs or k + 4)
        dist = label_distribution(score, label_sets)
        try:
            record.fast_token = parse_fast_token(score.first_token_text, label_sets)
        except UnparseableFastToken:
            record.fast_token = None
        conf_token = token_confidence(dist, k)
        record.confidences = ConfidencePair(
            c_intuition=intuition_confidence(dist), c_token=conf_token.value
        )
        record.short_pool = conf_token.short_pool
        record.fast_verdict = Label.A if dist.p_a >= dist.p_b else Label.B
        record.final_verdict = record.fast_verdict
        record.completion_tokens = 1
        record.correct = record.final_verdict == sample.gold
    except FsrmError as exc:
        record.error = f"{type(exc).__name__}: {exc}"
        record.correct = False
    return record


def judge_slow(
    sample: PreferenceSample,
    backend: Backend,
    params: SamplingParams = SamplingParams(),
    *,
    trigger: str = DEFAULT_TRIGGER,
    template: str | None = None,
    mode: Mode = Mode.SLOW,
) -> JudgmentRecord:
    """Full chain-of-thought judgment on the trigger-augmented prompt.

    A transcript without a final verdict is kept (tokens and all), marked
    with ``error=NoVerdict`` and counted incorrect.
    """
    record = _new_record(sample, mode)
    record.activated_slow = True
    try:
        prompt = augment_with_trigger(build_judge_prompt(sample, template), trigger)
        gen = backend.generate(prompt, params)
        transcript = parse_slow_transcript(gen.text)
        record.completion_tokens = gen.completion_tokens
        record.format_ok = transcript.format_ok
        record.slow_verdict = transcript.final_verdict
        if transcript.final_verdict is None:
            record.error = NO_VERDICT
            record.correct = False
        else:
            record.final_verdict = transcript.final_verdict
            record.correct = record.final_verdict == sample.gold
    except FsrmError as exc:
        record.error = f"{type(exc).__name__}: {exc}"
        record.correct = False
    return record


def route_strategy(
    confidences: ConfidencePair, strategy: Strategy, thresholds: ThresholdPair
) -> bool:
    """Would this strategy activate slow thinking?  Strict inequalities throughout."""
    if confidences is None:
        raise ValueError("activation needs the fast-pass confidences")
    if strategy is Strategy.DUAL:
        return should_activate_slow(confidences, thresholds)
    if strategy is Strategy.INTUITION_ONLY:
        return confidences.c_intuition < thresholds.tau_intuition
    return confidences.c_token < thresholds.tau_token


def judge_hybrid(
    sample: PreferenceSample,
    backend: Backend,
    thresholds: ThresholdPair,
    params: SamplingParams = SamplingParams(),
    label_sets: LabelTokenSets = DEFAULT_LABEL_SETS,
    *,
    strategy: Strategy = Strategy.DUAL,
    fallback_to_fast: bool = True,
    trigger: str = DEFAULT_TRIGGER,
    template: str | None = None,
    n_logprobs: int | None = None,
) -> JudgmentRecord:
    """Fast pass, confidence-gated slow pass, verdict selection.

    A fast-pass failure aborts the sample (no blind slow pass).  When the slow
    pass yields no verdict, ``fallback_to_fast`` keeps the fast verdict and
    flags ``parse_fallback``; with the fallback disabled the record keeps the
    NoVerdict error and counts incorrect.
    """
    record = judge_fast(
        sample,
        backend,
        label_sets,
        k=thresholds.k,
        n_logprobs=n_logprobs,
        template=template,
        mode=Mode.HYBRID,
    )
    if record.error is not None:
        return record
    assert record.confidences is not None
    if not route_strategy(record.confidences, strategy, thresholds):
        return record

    record.activated_slow = True
    slow = judge_slow(
        sample, backend, params, trigger=trigger, template=template, mode=Mode.HYBRID
    )
    record.completion_tokens = 1 + slow.completion_tokens
    record.format_ok = slow.format_ok
    record.slow_verdict = slow.slow_verdict

    if slow.error == NO_VERDICT:
        if fallback_to_fast:
            record.parse_fallback = True
            record.final_verdict = record.fast_verdict
            record.correct = record.final_verdict == sample.gold
        else:
            record.error = NO_VERDICT
            record.final_verdict = None
            record.correct = False
    elif slow.error is not None:
        record.error = slow.error
        record.final_verdict = None
        record.correct = False
    else:
        record.final_verdict = slow.final_verdict
        record.correct = record.final_verdict == sample.gold
    return record
