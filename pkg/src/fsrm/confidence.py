"""First-token confidence metrics, the activation rule, and threshold calibration.

Two complementary signals come out of the fast pass's first-token distribution:

* intuition confidence: the absolute probability gap between the two candidate
  labels, in [0, 1].  Low values mean the labels are nearly interchangeable.
* token confidence: the mean negative log-probability over the top-k first
  tokens *outside* the candidate set.  Low values mean probability mass is
  leaking to irrelevant tokens (including the 'tie' deferral token), i.e. the
  distribution is not sharp.

Slow thinking activates only when both fall strictly below their thresholds.
Thresholds are calibrated as the arithmetic means of each signal over
correctly fast-judged samples.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .errors import EmptyOffCandidatePool, NoCorrectSamples

# Pool size for the token confidence; evaluation default.
DEFAULT_CONFIDENCE_K = 20

_PROB_SLACK = 1e-9


@dataclass(frozen=True)
class LabelDistribution:
    """First-token probabilities for the candidate labels plus the off-candidate pool.

    ``p_a``/``p_b`` are raw (unnormalized over the pair) probabilities summed
    over each label's surface forms.  ``off_candidate_logprobs`` holds every
    returned token outside both label sets, sorted descending by logprob.
    """

    p_a: float
    p_b: float
    off_candidate_logprobs: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        if self.p_a < 0 or self.p_b < 0:
            raise ValueError("label probabilities must be nonnegative")
        if self.p_a + self.p_b > 1 + _PROB_SLACK:
            raise ValueError("label probabilities sum above 1")
        previous = None
        for token, logprob in self.off_candidate_logprobs:
            if logprob > _PROB_SLACK:
                raise ValueError(f"off-candidate token {token!r} has positive logprob")
            if previous is not None and logprob > previous:
                raise ValueError("off-candidate logprobs must be sorted descending")
            previous = logprob


class TokenConfidence(NamedTuple):
    """Token-confidence value plus a flag set when the pool was shorter than k."""

    value: float
    short_pool: bool


@dataclass(frozen=True)
class ConfidencePair:
    c_intuition: float
    c_token: float

    def __post_init__(self) -> None:
        if not 0 <= self.c_intuition <= 1 + _PROB_SLACK:
            raise ValueError("intuition confidence must lie in [0, 1]")
        if self.c_token < 0:
            raise ValueError("token confidence must be nonnegative")


@dataclass(frozen=True)
class ThresholdPair:
    tau_intuition: float
    tau_token: float
    k: int = DEFAULT_CONFIDENCE_K

    def __post_init__(self) -> None:
        if self.tau_intuition < 0 or self.tau_token < 0:
            raise ValueError("thresholds must be nonnegative")
        if not isinstance(self.k, int) or self.k < 1:
            raise ValueError("k must be a positive integer")


@dataclass(frozen=True)
class CalibrationResult:
    thresholds: ThresholdPair
    n_correct: int
    n_total: int
    source_digest: str

    def __post_init__(self) -> None:
        if not 1 <= self.n_correct <= self.n_total:
            raise ValueError("need 1 <= n_correct <= n_total")


def intuition_confidence(dist: LabelDistribution) -> float:
    """Absolute first-token probability gap between the two labels."""
    return abs(dist.p_a - dist.p_b)


def token_confidence(dist: LabelDistribution, k: int) -> TokenConfidence:
    """Mean negative logprob over the top-k off-candidate tokens.

    Backends cap how many logprobs they return, so a pool shorter than ``k``
    is averaged over what exists and flagged rather than rejected.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pool = dist.off_candidate_logprobs
    if not pool:
        raise EmptyOffCandidatePool("no off-candidate tokens in the distribution")
    take = pool[:k]
    value = -math.fsum(logprob for _, logprob in take) / len(take)
    return TokenConfidence(value=value, short_pool=len(take) < k)


def should_activate_slow(conf: ConfidencePair, thresholds: ThresholdPair) -> bool:
    """Dual-threshold rule: activate iff both confidences are strictly below."""
    return conf.c_intuition < thresholds.tau_intuition and conf.c_token < thresholds.tau_token


def _records_digest(records: Sequence[tuple[ConfidencePair, bool]]) -> str:
    # Sorted so the digest, like the thresholds, ignores record order.
    lines = sorted(
        f"{conf.c_intuition:.17g},{conf.c_token:.17g},{int(correct)}"
        for conf, correct in records
    )
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


def calibrate_thresholds(
    records: Iterable[tuple[ConfidencePair, bool]],
    k: int = DEFAULT_CONFIDENCE_K,
    source_digest: str | None = None,
) -> CalibrationResult:
    """Set each threshold to the mean confidence over correctly judged records.

    Plain arithmetic means, no trimming.  ``math.fsum`` keeps the result exact
    regardless of record order.
    """
    records = list(records)
    correct = [conf for conf, ok in records if ok]
    if not correct:
        raise NoCorrectSamples("calibration needs at least one correctly judged record")
    tau_intuition = math.fsum(c.c_intuition for c in correct) / len(correct)
    tau_token = math.fsum(c.c_token for c in correct) / len(correct)
    return CalibrationResult(
        thresholds=ThresholdPair(tau_intuition=tau_intuition, tau_token=tau_token, k=k),
        n_correct=len(correct),
        n_total=len(records),
        source_digest=source_digest if source_digest is not None else _records_digest(records),
    )


def save_calibration(result: CalibrationResult, path: str | Path) -> None:
    """Persist a calibration as a flat JSON document.

    Floats are written with 17 significant digits so the read-back is
    bit-exact.
    """
    th = result.thresholds
    if not (math.isfinite(th.tau_intuition) and math.isfinite(th.tau_token)):
        raise ValueError("only finite thresholds can be persisted")
    text = (
        "{\n"
        f'  "tau_intuition": {th.tau_intuition:.17g},\n'
        f'  "tau_token": {th.tau_token:.17g},\n'
        f'  "k": {th.k},\n'
        f'  "n_correct": {result.n_correct},\n'
        f'  "n_total": {result.n_total},\n'
        f'  "source_digest": {json.dumps(result.source_digest)}\n'
        "}\n"
    )
    Path(path).write_text(text, encoding="utf-8")


def load_calibration(path: str | Path) -> CalibrationResult:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return CalibrationResult(
        thresholds=ThresholdPair(
            tau_intuition=float(data["tau_intuition"]),
            tau_token=float(data["tau_token"]),
            k=int(data["k"]),
        ),
        n_correct=int(data["n_correct"]),
        n_total=int(data["n_total"]),
        source_digest=str(data["source_digest"]),
    )
