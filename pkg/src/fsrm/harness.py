"""Dataset ingestion, run execution, calibration, offline sweeps, and reports.

Runs persist one record per line as they complete, in dataset order, so an
interrupted run leaves a clean prefix and a rerun resumes by skipping ids it
already judged.  Threshold sweeps never touch a backend: routing is a
deterministic function of recorded confidences and slow outcomes, so any
threshold pair can be re-evaluated offline from a full-activation record set.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .backends import Backend, SamplingParams
from .confidence import (
    DEFAULT_CONFIDENCE_K,
    CalibrationResult,
    ConfidencePair,
    ThresholdPair,
    calibrate_thresholds,
    save_calibration,
)
from .errors import DuplicateId, MalformedLine, MissingSlowVerdicts
from .judge import DEFAULT_TRIGGER, Label, PreferenceSample, load_template
from .metrics import stratum_reports
from .router import (
    JudgmentRecord,
    Mode,
    Strategy,
    judge_fast,
    judge_hybrid,
    judge_slow,
    route_strategy,
)

logger = logging.getLogger(__name__)

RECORDS_FILENAME = "records.jsonl"
MANIFEST_FILENAME = "manifest.json"


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------

_REQUIRED_FIELDS = ("id", "domain", "prompt", "response_a", "response_b", "label")


def load_benchmark(path: str | Path) -> list[PreferenceSample]:
    """Read a line-delimited benchmark file with strict validation.

    Order is preserved; blank lines are skipped; any structural problem names
    the offending line.
    """
    samples: list[PreferenceSample] = []
    seen: set[str] = set()
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(row, dict):
                raise MalformedLine(f"line {line_no}: expected an object")
            missing = [f for f in _REQUIRED_FIELDS if f not in row]
            if missing:
                raise MalformedLine(f"line {line_no}: missing field(s) {', '.join(missing)}")
            if row["label"] not in ("A", "B"):
                raise MalformedLine(f"line {line_no}: label must be 'A' or 'B'")
            if row["id"] in seen:
                raise DuplicateId(f"line {line_no}: duplicate id {row['id']!r}")
            try:
                sample = PreferenceSample(
                    id=str(row["id"]),
                    domain=str(row["domain"]),
                    difficulty=(
                        str(row["difficulty"]) if row.get("difficulty") is not None else None
                    ),
                    prompt=str(row["prompt"]),
                    response_a=str(row["response_a"]),
                    response_b=str(row["response_b"]),
                    gold=Label(row["label"]),
                )
            except ValueError as exc:
                raise MalformedLine(f"line {line_no}: {exc}") from exc
            seen.add(sample.id)
            samples.append(sample)
    return samples


def write_benchmark(samples: Iterable[PreferenceSample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(
                json.dumps(
                    {
                        "id": s.id,
                        "domain": s.domain,
                        "difficulty": s.difficulty,
                        "prompt": s.prompt,
                        "response_a": s.response_a,
                        "response_b": s.response_b,
                        "label": s.gold.value,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def dataset_digest(samples: Sequence[PreferenceSample]) -> str:
    joined = "\n".join(f"{s.id}\t{s.domain}\t{s.difficulty}\t{s.gold.value}" for s in samples)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


def load_records(path: str | Path) -> list[JudgmentRecord]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(JudgmentRecord.from_json_line(line))
    return records


# ---------------------------------------------------------------------------
# Run execution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    mode: Mode
    thresholds: ThresholdPair | None = None
    sampling: SamplingParams = field(default_factory=SamplingParams)
    backend_name: str = "sim"
    concurrency: int = 4
    seed: int = 0
    position_swap: bool = False
    strategy: Strategy = Strategy.DUAL
    k: int = DEFAULT_CONFIDENCE_K
    template_path: str | None = None
    trigger: str = DEFAULT_TRIGGER
    fallback_on_no_verdict: bool = True

    def __post_init__(self) -> None:
        if self.mode is Mode.HYBRID and self.thresholds is None:
            raise ValueError("hybrid runs need calibrated thresholds")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")

    def snapshot(self) -> dict:
        return {
            "mode": self.mode.value,
            "thresholds": (
                {
                    "tau_intuition": self.thresholds.tau_intuition,
                    "tau_token": self.thresholds.tau_token,
                    "k": self.thresholds.k,
                }
                if self.thresholds
                else None
            ),
            "sampling": {
                "temperature": self.sampling.temperature,
                "top_p": self.sampling.top_p,
                "top_k": self.sampling.top_k,
                "max_tokens": self.sampling.max_tokens,
            },
            "backend": self.backend_name,
            "concurrency": self.concurrency,
            "seed": self.seed,
            "position_swap": self.position_swap,
            "strategy": self.strategy.value,
            "k": self.k,
            "template_path": self.template_path,
            "trigger": self.trigger,
            "fallback_on_no_verdict": self.fallback_on_no_verdict,
        }


@dataclass
class RunManifest:
    run_id: str
    config: dict
    dataset_digest: str
    model_id: str
    started_at: str
    finished_at: str
    record_count: int
    error_count: int

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


def _merge_swap(primary: JudgmentRecord, swapped: JudgmentRecord) -> JudgmentRecord:
    """Fold a swapped-order pass into the primary record.

    Consistency scoring: the sample counts correct only if both presentation
    orders were judged correctly.  Tokens accumulate across both passes.
    """
    primary.completion_tokens += swapped.completion_tokens
    primary.correct = bool(primary.correct) and bool(swapped.correct)
    primary.parse_fallback = primary.parse_fallback or swapped.parse_fallback
    if primary.error is None and swapped.error is not None:
        primary.error = f"swap: {swapped.error}"
    return primary


def _make_judge(
    config: RunConfig, backend: Backend, template: str | None
) -> Callable[[PreferenceSample], JudgmentRecord]:
    if config.mode is Mode.FAST:
        def judge(sample: PreferenceSample) -> JudgmentRecord:
            return judge_fast(sample, backend, k=config.k, template=template)
    elif config.mode is Mode.SLOW:
        def judge(sample: PreferenceSample) -> JudgmentRecord:
            return judge_slow(
                sample, backend, config.sampling, trigger=config.trigger, template=template
            )
    else:
        assert config.thresholds is not None
        def judge(sample: PreferenceSample) -> JudgmentRecord:
            return judge_hybrid(
                sample,
                backend,
                config.thresholds,
                config.sampling,
                strategy=config.strategy,
                fallback_to_fast=config.fallback_on_no_verdict,
                trigger=config.trigger,
                template=template,
            )

    if not config.position_swap:
        return judge

    def judge_with_swap(sample: PreferenceSample) -> JudgmentRecord:
        return _merge_swap(judge(sample), judge(sample.swapped()))

    return judge_with_swap


def run(
    samples: Sequence[PreferenceSample],
    config: RunConfig,
    backend: Backend,
    out_dir: str | Path | None = None,
) -> tuple[RunManifest, list[JudgmentRecord]]:
    """Judge every sample in the configured mode, persisting incrementally.

    Per-sample backend failures are recorded, never dropped; only dataset or
    configuration problems abort the run.  With ``out_dir`` set, records land
    in ``records.jsonl`` as they complete (dataset order) and already-recorded
    ids are skipped on rerun.
    """
    template = load_template(config.template_path) if config.template_path else None
    judge = _make_judge(config, backend, template)
    started_at = datetime.now(timezone.utc).isoformat(timespec="seconds")

    existing: dict[str, JudgmentRecord] = {}
    records_path: Path | None = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        records_path = out_path / RECORDS_FILENAME
        if records_path.exists():
            existing = {r.sample_id: r for r in load_records(records_path)}
            if existing:
                logger.info("resuming: %d records already on disk", len(existing))

    pending = [s for s in samples if s.id not in existing]
    by_id: dict[str, JudgmentRecord] = dict(existing)
    sink = records_path.open("a", encoding="utf-8") if records_path else None
    try:
        with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
            for record in pool.map(judge, pending):
                by_id[record.sample_id] = record
                if sink is not None:
                    sink.write(record.to_json_line() + "\n")
                    sink.flush()
    finally:
        if sink is not None:
            sink.close()

    records = [by_id[s.id] for s in samples]
    digest = dataset_digest(samples)
    config_snapshot = config.snapshot()
    run_id = hashlib.sha256(
        (json.dumps(config_snapshot, sort_keys=True) + digest).encode("utf-8")
    ).hexdigest()[:12]
    manifest = RunManifest(
        run_id=run_id,
        config=config_snapshot,
        dataset_digest=digest,
        model_id=backend.model_id,
        started_at=started_at,
        finished_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        record_count=len(records),
        error_count=sum(1 for r in records if r.error is not None),
    )
    if out_dir is not None:
        (Path(out_dir) / MANIFEST_FILENAME).write_text(manifest.to_json() + "\n", "utf-8")
    return manifest, records


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


def calibrate(
    samples: Sequence[PreferenceSample],
    backend: Backend,
    k: int = DEFAULT_CONFIDENCE_K,
    out_path: str | Path | None = None,
    concurrency: int = 4,
) -> CalibrationResult:
    """Fast-judge the labeled samples and set thresholds to the correct-sample means."""
    config = RunConfig(mode=Mode.FAST, k=k, concurrency=concurrency)
    _, records = run(samples, config, backend)
    pairs = [
        (r.confidences, bool(r.correct)) for r in records if r.confidences is not None
    ]
    result = calibrate_thresholds(pairs, k=k, source_digest=dataset_digest(samples))
    if out_path is not None:
        save_calibration(result, out_path)
    return result


# ---------------------------------------------------------------------------
# Offline threshold sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    source: str  # "grid" or a quantile name
    tau_intuition: float
    tau_token: float
    n: int
    activated: int
    fast_rate: float
    accuracy: float
    hybrid_tokens: int
    slow_tokens: int
    token_savings: float


@dataclass(frozen=True)
class ReroutedSample:
    """One sample's outcome under a hypothetical threshold pair."""

    sample_id: str
    activated: bool
    final_verdict: Label | None
    correct: bool
    completion_tokens: int


@dataclass(frozen=True)
class _SweepSample:
    sample_id: str
    confidences: ConfidencePair
    gold: Label
    fast_verdict: Label
    slow_verdict: Label | None
    slow_tokens: int


def _prepare_sweep(records: Sequence[JudgmentRecord]) -> list[_SweepSample]:
    prepared = []
    for r in records:
        if not r.activated_slow:
            raise MissingSlowVerdicts(
                f"sample {r.sample_id!r} has no slow result; sweep sources must "
                f"come from a full-activation hybrid run"
            )
        if r.confidences is None or r.fast_verdict is None or r.gold is None:
            raise MissingSlowVerdicts(
                f"sample {r.sample_id!r} lacks the fast-pass fields a sweep needs"
            )
        prepared.append(
            _SweepSample(
                sample_id=r.sample_id,
                confidences=r.confidences,
                gold=r.gold,
                fast_verdict=r.fast_verdict,
                slow_verdict=r.slow_verdict,
                slow_tokens=r.completion_tokens - 1,
            )
        )
    return prepared


def _reroute_one(
    s: _SweepSample,
    thresholds: ThresholdPair,
    strategy: Strategy,
    fallback_to_fast: bool,
) -> ReroutedSample:
    if route_strategy(s.confidences, strategy, thresholds):
        if s.slow_verdict is not None:
            verdict: Label | None = s.slow_verdict
        else:
            verdict = s.fast_verdict if fallback_to_fast else None
        return ReroutedSample(
            sample_id=s.sample_id,
            activated=True,
            final_verdict=verdict,
            correct=verdict == s.gold if verdict is not None else False,
            completion_tokens=1 + s.slow_tokens,
        )
    return ReroutedSample(
        sample_id=s.sample_id,
        activated=False,
        final_verdict=s.fast_verdict,
        correct=s.fast_verdict == s.gold,
        completion_tokens=1,
    )


def reroute_records(
    records: Sequence[JudgmentRecord],
    thresholds: ThresholdPair,
    strategy: Strategy = Strategy.DUAL,
    fallback_to_fast: bool = True,
) -> list[ReroutedSample]:
    """Re-run the routing decision offline for every recorded sample.

    Equivalent, sample for sample, to a fresh hybrid run at these thresholds
    on the same deterministic backend.
    """
    prepared = _prepare_sweep(records)
    return [_reroute_one(s, thresholds, strategy, fallback_to_fast) for s in prepared]


def _evaluate_point(
    prepared: Sequence[_SweepSample],
    thresholds: ThresholdPair,
    strategy: Strategy,
    fallback_to_fast: bool,
    source: str,
) -> SweepRow:
    n = len(prepared)
    slow_tokens = sum(s.slow_tokens for s in prepared)
    activated = 0
    correct = 0
    hybrid_tokens = 0
    for s in prepared:
        routed = _reroute_one(s, thresholds, strategy, fallback_to_fast)
        activated += routed.activated
        correct += routed.correct
        hybrid_tokens += routed.completion_tokens
    return SweepRow(
        source=source,
        tau_intuition=thresholds.tau_intuition,
        tau_token=thresholds.tau_token,
        n=n,
        activated=activated,
        fast_rate=(n - activated) / n,
        accuracy=correct / n,
        hybrid_tokens=hybrid_tokens,
        slow_tokens=slow_tokens,
        token_savings=1 - hybrid_tokens / slow_tokens if slow_tokens else 0.0,
    )


def sweep_thresholds(
    records: Sequence[JudgmentRecord],
    grid_intuition: Sequence[float],
    grid_token: Sequence[float],
    k: int = DEFAULT_CONFIDENCE_K,
    strategy: Strategy = Strategy.DUAL,
    fallback_to_fast: bool = True,
) -> list[SweepRow]:
    """Re-route a recorded run over a threshold grid, no backend calls.

    Emits one row per grid point plus one row per quantile threshold (min,
    25th percentile, mean, 75th percentile of each confidence over correctly
    fast-judged samples).
    """
    if not records:
        raise MissingSlowVerdicts("sweep needs at least one record")
    prepared = _prepare_sweep(records)
    rows = [
        _evaluate_point(prepared, ThresholdPair(ti, tt, k=k), strategy, fallback_to_fast, "grid")
        for ti in grid_intuition
        for tt in grid_token
    ]

    fast_correct = [s for s in prepared if s.fast_verdict == s.gold]
    correct_ci = np.array([s.confidences.c_intuition for s in fast_correct])
    correct_ct = np.array([s.confidences.c_token for s in fast_correct])
    if len(correct_ci):
        quantiles = {
            "min": (float(correct_ci.min()), float(correct_ct.min())),
            "q25": (
                float(np.percentile(correct_ci, 25)),
                float(np.percentile(correct_ct, 25)),
            ),
            "mean": (float(correct_ci.mean()), float(correct_ct.mean())),
            "q75": (
                float(np.percentile(correct_ci, 75)),
                float(np.percentile(correct_ct, 75)),
            ),
        }
        for name, (ti, tt) in quantiles.items():
            rows.append(
                _evaluate_point(
                    prepared, ThresholdPair(ti, tt, k=k), strategy, fallback_to_fast, name
                )
            )
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "source", "tau_intuition", "tau_token", "n", "activated",
                "fast_rate", "accuracy", "hybrid_tokens", "slow_tokens",
                "token_savings",
            ]
        )
        for row in rows:
            writer.writerow(
                [
                    row.source, repr(row.tau_intuition), repr(row.tau_token),
                    row.n, row.activated, repr(row.fast_rate), repr(row.accuracy),
                    row.hybrid_tokens, row.slow_tokens, repr(row.token_savings),
                ]
            )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _fmt_pct(value: float | None) -> str:
    return "-" if value is None else f"{value * 100:.1f}%"


def _fmt_pts(value: float | None) -> str:
    return "-" if value is None else f"{value:+.1f}"


def emit_report(
    records: Sequence[JudgmentRecord],
    out_dir: str | Path,
    slow_records: Sequence[JudgmentRecord] | None = None,
) -> tuple[Path, Path]:
    """Write the per-stratum table as markdown plus a full-precision CSV.

    Both files are pure functions of the records, so regenerating from
    persisted runs is byte-identical.
    """
    reports = stratum_reports(records, slow_records)
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    md_path = out_path / "report.md"
    csv_path = out_path / "report.csv"

    with_hybrid = any(r.fast_rate is not None for r in reports)
    with_slow = slow_records is not None
    headers = ["Stratum", "n", "Accuracy"]
    if with_hybrid:
        headers.append("Fast Rate")
    if with_slow:
        headers.extend(["Token Savings", "Δ vs slow (pts)"])

    lines = ["# Run report", "", "| " + " | ".join(headers) + " |"]
    lines.append("|" + "---|" * len(headers))
    for rep in reports:
        cells = [rep.key.describe(), str(rep.n), _fmt_pct(rep.accuracy)]
        if with_hybrid:
            cells.append(_fmt_pct(rep.fast_rate))
        if with_slow:
            cells.extend([_fmt_pct(rep.token_savings), _fmt_pts(rep.delta_vs_slow)])
        lines.append("| " + " | ".join(cells) + " |")
    md_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["domain", "difficulty", "n", "accuracy", "fast_rate", "token_savings",
             "delta_vs_slow"]
        )
        for rep in reports:
            writer.writerow(
                [
                    rep.key.domain if rep.key.domain is not None else "",
                    rep.key.difficulty if rep.key.difficulty is not None else "",
                    rep.n,
                    repr(rep.accuracy),
                    repr(rep.fast_rate) if rep.fast_rate is not None else "",
                    repr(rep.token_savings) if rep.token_savings is not None else "",
                    repr(rep.delta_vs_slow) if rep.delta_vs_slow is not None else "",
                ]
            )
    return md_path, csv_path
