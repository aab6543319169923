"""Accuracy, fast rate, token savings, and hybrid-vs-slow deltas by stratum.

Records with errors or missing verdicts count as incorrect — excluding them
would inflate accuracy and make modes incomparable.  Token savings is signed:
under total activation the extra fast-pass token makes hybrid strictly
costlier than slow-only, and that shows up as a small negative value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import EmptyStratum, NotHybridRun, SampleSetMismatch, ZeroSlowTokens
from .router import JudgmentRecord, Mode


@dataclass(frozen=True)
class StratumKey:
    """Record selector; ``None`` fields are wildcards, ALL matches everything."""

    domain: str | None
    difficulty: str | None = None

    def matches(self, record: JudgmentRecord) -> bool:
        if self.domain is not None and record.domain != self.domain:
            return False
        if self.difficulty is not None and record.difficulty != self.difficulty:
            return False
        return True

    def describe(self) -> str:
        if self.domain is None and self.difficulty is None:
            return "all"
        parts = [p for p in (self.domain, self.difficulty) if p is not None]
        return "/".join(parts)


ALL = StratumKey(domain=None, difficulty=None)


@dataclass(frozen=True)
class StratumReport:
    key: StratumKey
    n: int
    accuracy: float
    fast_rate: float | None = None
    token_savings: float | None = None
    delta_vs_slow: float | None = None


def _select(records: Sequence[JudgmentRecord], key: StratumKey) -> list[JudgmentRecord]:
    selected = [r for r in records if key.matches(r)]
    if not selected:
        raise EmptyStratum(f"no records in stratum {key.describe()!r}")
    return selected


def accuracy(records: Sequence[JudgmentRecord], key: StratumKey = ALL) -> float:
    """Fraction of correct verdicts; errored records count incorrect."""
    selected = _select(records, key)
    return sum(1 for r in selected if r.correct is True) / len(selected)


def fast_rate(records: Sequence[JudgmentRecord], key: StratumKey = ALL) -> float:
    """Fraction of a hybrid run completed without activating slow thinking."""
    if any(r.mode is not Mode.HYBRID for r in records):
        raise NotHybridRun("fast rate is defined only over hybrid-mode records")
    selected = _select(records, key)
    return sum(1 for r in selected if not r.activated_slow) / len(selected)


def _paired(
    hybrid_records: Sequence[JudgmentRecord],
    slow_records: Sequence[JudgmentRecord],
    key: StratumKey,
) -> tuple[list[JudgmentRecord], list[JudgmentRecord]]:
    hybrid = _select(hybrid_records, key)
    slow = _select(slow_records, key)
    if {r.sample_id for r in hybrid} != {r.sample_id for r in slow}:
        raise SampleSetMismatch(
            f"hybrid and slow runs cover different samples in stratum {key.describe()!r}"
        )
    return hybrid, slow


def token_savings(
    hybrid_records: Sequence[JudgmentRecord],
    slow_records: Sequence[JudgmentRecord],
    key: StratumKey = ALL,
) -> float:
    """1 - (hybrid token total / slow token total) over the same samples."""
    hybrid, slow = _paired(hybrid_records, slow_records, key)
    slow_total = sum(r.completion_tokens for r in slow)
    if slow_total == 0:
        raise ZeroSlowTokens(f"slow run consumed no tokens in stratum {key.describe()!r}")
    hybrid_total = sum(r.completion_tokens for r in hybrid)
    return 1 - hybrid_total / slow_total


def delta_vs_slow(
    hybrid_records: Sequence[JudgmentRecord],
    slow_records: Sequence[JudgmentRecord],
    key: StratumKey = ALL,
) -> float:
    """Hybrid accuracy minus slow accuracy, in percentage points."""
    hybrid, slow = _paired(hybrid_records, slow_records, key)
    return (accuracy(hybrid) - accuracy(slow)) * 100.0


def stratum_keys(records: Sequence[JudgmentRecord]) -> list[StratumKey]:
    """ALL, then one key per domain, then one per difficulty level."""
    keys = [ALL]
    keys.extend(StratumKey(domain=d) for d in sorted({r.domain for r in records}))
    difficulties = sorted({r.difficulty for r in records if r.difficulty is not None})
    keys.extend(StratumKey(domain=None, difficulty=d) for d in difficulties)
    return keys


def stratum_reports(
    records: Sequence[JudgmentRecord],
    slow_records: Sequence[JudgmentRecord] | None = None,
    keys: Sequence[StratumKey] | None = None,
) -> list[StratumReport]:
    """Per-stratum metric table for one run, optionally paired with a slow run."""
    if not records:
        raise EmptyStratum("no records to report on")
    hybrid_run = all(r.mode is Mode.HYBRID for r in records)
    reports = []
    for key in keys if keys is not None else stratum_keys(records):
        selected = _select(records, key)
        reports.append(
            StratumReport(
                key=key,
                n=len(selected),
                accuracy=accuracy(records, key),
                fast_rate=fast_rate(records, key) if hybrid_run else None,
                token_savings=(
                    token_savings(records, slow_records, key) if slow_records else None
                ),
                delta_vs_slow=(
                    delta_vs_slow(records, slow_records, key) if slow_records else None
                ),
            )
        )
    return reports
