"""Hybrid fast/slow preference judging with dual-confidence routing."""

__version__ = "0.1.0"

from .backends import (
    GenResponse,
    HttpBackend,
    HttpConfig,
    RecordingBackend,
    ReplayBackend,
    SamplingParams,
    ScoreResponse,
    SimBackend,
    SimSpec,
    StratumSpec,
    sim_configure,
)
from .confidence import (
    CalibrationResult,
    ConfidencePair,
    LabelDistribution,
    ThresholdPair,
    calibrate_thresholds,
    intuition_confidence,
    load_calibration,
    save_calibration,
    should_activate_slow,
    token_confidence,
)
from .harness import (
    RunConfig,
    RunManifest,
    calibrate,
    emit_report,
    load_benchmark,
    load_records,
    reroute_records,
    run,
    sweep_thresholds,
    write_benchmark,
)
from .judge import (
    FastToken,
    JudgePrompt,
    Label,
    LabelTokenSets,
    PreferenceSample,
    SlowTranscript,
    augment_with_trigger,
    build_judge_prompt,
    parse_fast_token,
    parse_slow_transcript,
)
from .metrics import ALL, StratumKey, StratumReport, accuracy, delta_vs_slow, fast_rate, token_savings
from .router import (
    JudgmentRecord,
    Mode,
    Strategy,
    judge_fast,
    judge_hybrid,
    judge_slow,
    route_strategy,
)
