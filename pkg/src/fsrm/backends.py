"""Model backends: live HTTP, deterministic simulator, and file replay.

All backends expose the same two calls — a single-token scoring pass that
returns top log-probabilities, and a full generation pass — so the router and
harness run unchanged against any of them.  A recording wrapper captures a
live (or simulated) session to a line-delimited store that the replay backend
serves back verbatim.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol

import requests

from .errors import BackendProtocol, BackendUnavailable, InvalidSpec, ReplayMiss
from .judge import JudgePrompt, Label, PreferenceSample

logger = logging.getLogger(__name__)

ENV_BASE_URL = "FSRM_BASE_URL"
ENV_API_KEY = "FSRM_API_KEY"

_LOGPROB_SLACK = 1e-9


@dataclass(frozen=True)
class SamplingParams:
    """Generation parameters; defaults are the evaluation settings."""

    temperature: float = 0.6
    top_p: float = 0.95
    top_k: int = 20
    max_tokens: int = 8192

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if self.top_k < 0:
            raise ValueError("top_k must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class ScoreResponse:
    """First completion token plus the top alternatives with logprobs."""

    first_token_text: str
    top_logprobs: tuple[tuple[str, float], ...]
    model_id: str

    def __post_init__(self) -> None:
        if not self.top_logprobs:
            raise ValueError("top_logprobs must be non-empty")
        best = max(lp for _, lp in self.top_logprobs)
        if any(lp > _LOGPROB_SLACK for _, lp in self.top_logprobs):
            raise ValueError("logprobs must be <= 0")
        head_token, head_lp = self.top_logprobs[0]
        if head_lp < best or head_token != self.first_token_text:
            raise ValueError("first_token_text must be the highest-logprob entry")


@dataclass(frozen=True)
class GenResponse:
    """Full completion text with the backend-reported completion token count."""

    text: str
    completion_tokens: int
    model_id: str
    truncated: bool = False  # max_tokens was hit

    def __post_init__(self) -> None:
        if self.text and self.completion_tokens < 1:
            raise ValueError("non-empty text must count >= 1 completion token")


class Backend(Protocol):
    """Uniform surface the router and harness program against."""

    model_id: str

    def score_first_token(self, prompt: JudgePrompt, n_logprobs: int) -> ScoreResponse: ...

    def generate(self, prompt: JudgePrompt, params: SamplingParams) -> GenResponse: ...


# ---------------------------------------------------------------------------
# Live HTTP backend (OpenAI-compatible chat completions)
# ---------------------------------------------------------------------------


@dataclass
class HttpConfig:
    base_url: str
    model: str
    api_key: str | None = None
    supports_prefill: bool = True
    max_in_flight: int = 8
    timeout: float = 120.0
    max_retries: int = 3
    retry_base_delay: float = 0.5

    @classmethod
    def from_env(cls, model: str, **overrides) -> "HttpConfig":
        base_url = overrides.pop("base_url", None) or os.environ.get(ENV_BASE_URL)
        if not base_url:
            raise BackendUnavailable(f"no base URL: set {ENV_BASE_URL} or pass base_url")
        api_key = overrides.pop("api_key", None) or os.environ.get(ENV_API_KEY)
        return cls(base_url=base_url, model=model, api_key=api_key, **overrides)


class HttpBackend:
    """Chat-completions client with capped concurrency and bounded retries.

    The fast pass is a max_tokens=1, temperature=0 call requesting top
    logprobs; the slow pass sends the trigger as a trailing assistant message
    when prefill is supported, otherwise inline in the user prompt.
    Transport failures are retried with exponential backoff; exhausted retries
    surface as :class:`BackendUnavailable`.
    """

    def __init__(self, config: HttpConfig) -> None:
        self._config = config
        self._session = requests.Session()
        self._gate = threading.BoundedSemaphore(config.max_in_flight)
        self.model_id = config.model

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._config.api_key:
            headers["Authorization"] = f"Bearer {self._config.api_key}"
        return headers

    def _post(self, payload: dict) -> dict:
        url = self._config.base_url.rstrip("/") + "/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self._config.max_retries + 1):
            if attempt:
                delay = self._config.retry_base_delay * 2 ** (attempt - 1)
                logger.warning("retrying %s in %.1fs (attempt %d)", url, delay, attempt + 1)
                time.sleep(delay)
            try:
                with self._gate:
                    response = self._session.post(
                        url, json=payload, headers=self._headers(), timeout=self._config.timeout
                    )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code >= 500:
                last_error = BackendUnavailable(f"HTTP {response.status_code}")
                continue
            if response.status_code >= 400:
                raise BackendUnavailable(
                    f"HTTP {response.status_code}: {response.text[:200]}"
                )
            try:
                return response.json()
            except ValueError as exc:
                raise BackendProtocol(f"non-JSON reply from {url}") from exc
        raise BackendUnavailable(f"request to {url} failed after retries: {last_error}")

    def _messages_for(self, prompt: JudgePrompt) -> list[dict[str, str]]:
        if prompt.trigger_appended and prompt.trigger and self._config.supports_prefill:
            # Deliver the trigger as an assistant prefill so the model's own
            # first token is forced; the user turn carries the bare prompt.
            body = prompt.rendered_text[: -len(prompt.trigger)]
            return [
                {"role": "user", "content": body},
                {"role": "assistant", "content": prompt.trigger},
            ]
        return [{"role": "user", "content": prompt.rendered_text}]

    def score_first_token(self, prompt: JudgePrompt, n_logprobs: int) -> ScoreResponse:
        if prompt.trigger_appended:
            raise ValueError("fast scoring expects the un-augmented prompt")
        if n_logprobs < 1:
            raise ValueError("n_logprobs must be >= 1")
        payload = {
            "model": self._config.model,
            "messages": self._messages_for(prompt),
            "temperature": 0.0,
            "top_p": 1.0,
            "max_tokens": 1,
            "logprobs": True,
            "top_logprobs": n_logprobs,
        }
        reply = self._post(payload)
        try:
            choice = reply["choices"][0]
            content = choice["logprobs"]["content"][0]
            sampled = content["token"]
            entries = [(e["token"], float(e["logprob"])) for e in content["top_logprobs"]]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendProtocol("reply lacks first-token logprobs") from exc
        if not entries:
            raise BackendProtocol("reply carries an empty top_logprobs list")
        entries.sort(key=lambda item: item[1], reverse=True)
        if entries[0][0] != sampled:
            # Greedy decoding may break logprob ties arbitrarily; accept the
            # sampled token as head only if it shares the max logprob.
            sampled_lp = dict(entries).get(sampled)
            if sampled_lp is None or sampled_lp < entries[0][1]:
                raise BackendProtocol("sampled first token is not the logprob argmax")
            entries.remove((sampled, sampled_lp))
            entries.insert(0, (sampled, sampled_lp))
        try:
            return ScoreResponse(
                first_token_text=sampled,
                top_logprobs=tuple(entries),
                model_id=str(reply.get("model", self._config.model)),
            )
        except ValueError as exc:
            raise BackendProtocol(str(exc)) from exc

    def generate(self, prompt: JudgePrompt, params: SamplingParams) -> GenResponse:
        payload = {
            "model": self._config.model,
            "messages": self._messages_for(prompt),
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        }
        reply = self._post(payload)
        try:
            choice = reply["choices"][0]
            text = choice["message"]["content"]
            completion_tokens = int(reply["usage"]["completion_tokens"])
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendProtocol("reply lacks message content or token usage") from exc
        if text is None:
            raise BackendProtocol("reply carries a null message content")
        try:
            return GenResponse(
                text=text,
                completion_tokens=completion_tokens,
                model_id=str(reply.get("model", self._config.model)),
                truncated=choice.get("finish_reason") == "length",
            )
        except ValueError as exc:
            raise BackendProtocol(str(exc)) from exc


# ---------------------------------------------------------------------------
# Deterministic simulator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StratumSpec:
    """Behavior of the simulated judge on one (domain, difficulty) stratum.

    Confidence targets are realized in expectation: each sample draws a
    symmetric jitter around the mean.  ``mean_token_conf`` minus its spread
    must stay above ``MIN_TOKEN_CONF`` so the off-candidate pool mass leaves
    room for the label probabilities.
    """

    fast_accuracy: float
    slow_accuracy: float
    mean_intuition_conf: float
    mean_token_conf: float
    slow_tokens_lo: int
    slow_tokens_hi: int
    noncommittal_rate: float = 0.0
    intuition_spread: float = 0.05
    token_conf_spread: float = 1.0


MIN_TOKEN_CONF = 4.0

# Off-candidate pool emitted by the simulator: the deferral token plus filler
# tokens, none of which parse as a standalone verdict.
_OFF_TOKENS = ("tie",) + tuple(f"tok{i}" for i in range(21))
_SIM_MAX_LOGPROBS = 2 + len(_OFF_TOKENS)

_FILLER_WORDS = (
    "comparing", "both", "answers", "for", "accuracy", "depth", "and",
    "clarity", "then", "checking", "each", "claim", "against", "the",
    "question", "before", "settling", "on", "one", "side",
)
_NONCOMMITTAL_WORDS = (
    "after", "review", "it", "is", "unclear", "which", "response",
    "serves", "the", "user", "better",
)


@dataclass(frozen=True)
class SimSpec:
    """Per-stratum behavior table plus the master seed.

    Keys are (domain, difficulty) with ``None`` as a wildcard; lookup tries
    the exact pair, then (domain, None), (None, difficulty), (None, None).
    """

    strata: Mapping[tuple[str | None, str | None], StratumSpec]
    seed: int = 0

    @classmethod
    def single(cls, stratum: StratumSpec, seed: int = 0) -> "SimSpec":
        return cls(strata={(None, None): stratum}, seed=seed)

    def resolve(self, domain: str, difficulty: str | None) -> StratumSpec | None:
        for key in ((domain, difficulty), (domain, None), (None, difficulty), (None, None)):
            if key in self.strata:
                return self.strata[key]
        return None


def _validate_stratum(key: tuple[str | None, str | None], st: StratumSpec) -> None:
    def fail(msg: str) -> None:
        raise InvalidSpec(f"stratum {key}: {msg}")

    for name in ("fast_accuracy", "slow_accuracy", "noncommittal_rate"):
        value = getattr(st, name)
        if not 0 <= value <= 1:
            fail(f"{name}={value} outside [0, 1]")
    if not 0 <= st.mean_intuition_conf <= 1:
        fail("mean_intuition_conf outside [0, 1]")
    if st.intuition_spread < 0 or st.token_conf_spread < 0:
        fail("spreads must be nonnegative")
    if st.slow_tokens_lo < 1 or st.slow_tokens_hi < st.slow_tokens_lo:
        fail("need 1 <= slow_tokens_lo <= slow_tokens_hi")
    if st.mean_token_conf - st.token_conf_spread < MIN_TOKEN_CONF:
        fail(
            f"mean_token_conf - token_conf_spread must be >= {MIN_TOKEN_CONF} "
            "so label probabilities stay nonnegative"
        )


def _unit(seed: int, sample_id: str, purpose: str) -> float:
    """Deterministic uniform draw in [0, 1) keyed on (seed, sample, purpose)."""
    digest = hashlib.sha256(f"{seed}|{sample_id}|{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


@dataclass(frozen=True)
class _SimEntry:
    gold: Label
    stratum: StratumSpec


class SimBackend:
    """Seeded, stateless simulator: identical (spec, sample id) in, identical out.

    Verdict correctness is a hash-based Bernoulli per stratum accuracy; the
    emitted first-token distribution realizes the stratum's confidence targets
    in expectation; slow passes emit synthetic think-block transcripts with a
    seeded token count, so parsers and accounting run exactly as they would
    against a live model.
    """

    def __init__(self, spec: SimSpec) -> None:
        for key, stratum in spec.strata.items():
            _validate_stratum(key, stratum)
        if not spec.strata:
            raise InvalidSpec("spec defines no strata")
        self._spec = spec
        self._entries: dict[str, _SimEntry] = {}
        self.model_id = f"sim-seed{spec.seed}"

    def register(self, samples: Iterable[PreferenceSample]) -> "SimBackend":
        """Attach the dataset the simulator will be asked about.

        Also registers the position-swapped alias of every sample so swap
        evaluation draws an independent judgment.
        """
        for sample in samples:
            stratum = self._spec.resolve(sample.domain, sample.difficulty)
            if stratum is None:
                raise InvalidSpec(
                    f"no stratum covers sample {sample.id!r} "
                    f"(domain={sample.domain!r}, difficulty={sample.difficulty!r})"
                )
            self._entries[sample.id] = _SimEntry(gold=sample.gold, stratum=stratum)
            self._entries[f"{sample.id}#swap"] = _SimEntry(
                gold=sample.gold.other(), stratum=stratum
            )
        return self

    def _entry(self, prompt: JudgePrompt) -> _SimEntry:
        if prompt.sample_id is None or prompt.sample_id not in self._entries:
            raise InvalidSpec(
                f"sample {prompt.sample_id!r} is not registered with the simulator"
            )
        return self._entries[prompt.sample_id]

    def _draw(self, sample_id: str, purpose: str) -> float:
        return _unit(self._spec.seed, sample_id, purpose)

    def score_first_token(self, prompt: JudgePrompt, n_logprobs: int) -> ScoreResponse:
        if n_logprobs < 1:
            raise ValueError("n_logprobs must be >= 1")
        entry = self._entry(prompt)
        st = entry.stratum
        sid = prompt.sample_id or ""

        correct = self._draw(sid, "fast-correct") < st.fast_accuracy
        winner = entry.gold if correct else entry.gold.other()

        ci_width = min(st.intuition_spread, st.mean_intuition_conf, 1 - st.mean_intuition_conf)
        gap = st.mean_intuition_conf + (2 * self._draw(sid, "fast-gap") - 1) * ci_width
        token_conf = st.mean_token_conf + (
            2 * self._draw(sid, "fast-leak") - 1
        ) * st.token_conf_spread

        off_prob = math.exp(-token_conf)
        label_mass = 1.0 - off_prob * len(_OFF_TOKENS)
        gap = min(gap, label_mass - 1e-9)  # keep the losing label's probability positive
        p_winner = (label_mass + gap) / 2
        p_loser = (label_mass - gap) / 2

        entries = [
            (winner.value, math.log(p_winner)),
            (winner.other().value, math.log(p_loser)),
        ]
        entries.extend((tok, -token_conf) for tok in _OFF_TOKENS)
        entries.sort(key=lambda item: item[1], reverse=True)
        entries = entries[: min(n_logprobs, _SIM_MAX_LOGPROBS)]
        return ScoreResponse(
            first_token_text=entries[0][0],
            top_logprobs=tuple(entries),
            model_id=self.model_id,
        )

    def generate(self, prompt: JudgePrompt, params: SamplingParams) -> GenResponse:
        entry = self._entry(prompt)
        st = entry.stratum
        sid = prompt.sample_id or ""

        correct = self._draw(sid, "slow-correct") < st.slow_accuracy
        verdict = entry.gold if correct else entry.gold.other()
        noncommittal = self._draw(sid, "slow-noncommittal") < st.noncommittal_rate
        span = st.slow_tokens_hi - st.slow_tokens_lo + 1
        budget = st.slow_tokens_lo + int(self._draw(sid, "slow-tokens") * span)
        budget = min(budget, st.slow_tokens_hi)

        if noncommittal or budget < 4:
            words = [
                _NONCOMMITTAL_WORDS[i % len(_NONCOMMITTAL_WORDS)] for i in range(budget)
            ]
        else:
            offset = int(self._draw(sid, "slow-phrase") * len(_FILLER_WORDS))
            filler = [
                _FILLER_WORDS[(offset + i) % len(_FILLER_WORDS)] for i in range(budget - 3)
            ]
            words = ["<think>", *filler, "</think>", verdict.value]

        truncated = len(words) > params.max_tokens
        if truncated:
            words = words[: params.max_tokens]
        return GenResponse(
            text=" ".join(words),
            completion_tokens=len(words),
            model_id=self.model_id,
            truncated=truncated,
        )


def sim_configure(spec: SimSpec, samples: Iterable[PreferenceSample] = ()) -> SimBackend:
    """Validate a spec and build the simulator, optionally pre-registering samples."""
    backend = SimBackend(spec)
    samples = list(samples)
    if samples:
        backend.register(samples)
    return backend


def sim_spec_from_dict(data: Mapping) -> SimSpec:
    """Build a SimSpec from a parsed JSON document (see README for the schema)."""
    try:
        strata: dict[tuple[str | None, str | None], StratumSpec] = {}
        for row in data["strata"]:
            row = dict(row)
            key = (row.pop("domain", None), row.pop("difficulty", None))
            strata[key] = StratumSpec(**row)
        return SimSpec(strata=strata, seed=int(data.get("seed", 0)))
    except InvalidSpec:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpec(f"bad simulator spec document: {exc}") from exc


def load_sim_spec(path: str | Path) -> SimSpec:
    return sim_spec_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Record / replay
# ---------------------------------------------------------------------------


class RecordingBackend:
    """Pass-through wrapper that appends every response to a JSONL store."""

    def __init__(self, inner: Backend, path: str | Path) -> None:
        self._inner = inner
        self._path = Path(path)
        self._lock = threading.Lock()
        self.model_id = inner.model_id

    def _write(self, record: dict) -> None:
        line = json.dumps(record, ensure_ascii=False)
        with self._lock, self._path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def score_first_token(self, prompt: JudgePrompt, n_logprobs: int) -> ScoreResponse:
        response = self._inner.score_first_token(prompt, n_logprobs)
        self._write(
            {
                "sample_id": prompt.sample_id,
                "kind": "score",
                "model_id": response.model_id,
                "first_token_text": response.first_token_text,
                "top_logprobs": [[tok, lp] for tok, lp in response.top_logprobs],
            }
        )
        return response

    def generate(self, prompt: JudgePrompt, params: SamplingParams) -> GenResponse:
        response = self._inner.generate(prompt, params)
        self._write(
            {
                "sample_id": prompt.sample_id,
                "kind": "generate",
                "model_id": response.model_id,
                "text": response.text,
                "completion_tokens": response.completion_tokens,
                "truncated": response.truncated,
            }
        )
        return response


class ReplayBackend:
    """Serves a recorded session keyed by (sample id, pass kind)."""

    def __init__(self, path: str | Path) -> None:
        self._store: dict[tuple[str, str], dict] = {}
        self.model_id = "replay"
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                self._store[(record["sample_id"], record["kind"])] = record
                self.model_id = record.get("model_id", self.model_id)

    def _record(self, prompt: JudgePrompt, kind: str) -> dict:
        key = (prompt.sample_id or "", kind)
        if key not in self._store:
            raise ReplayMiss(f"no recorded {kind} pass for sample {prompt.sample_id!r}")
        return self._store[key]

    def score_first_token(self, prompt: JudgePrompt, n_logprobs: int) -> ScoreResponse:
        record = self._record(prompt, "score")
        return ScoreResponse(
            first_token_text=record["first_token_text"],
            top_logprobs=tuple((tok, float(lp)) for tok, lp in record["top_logprobs"]),
            model_id=record["model_id"],
        )

    def generate(self, prompt: JudgePrompt, params: SamplingParams) -> GenResponse:
        record = self._record(prompt, "generate")
        return GenResponse(
            text=record["text"],
            completion_tokens=int(record["completion_tokens"]),
            model_id=record["model_id"],
            truncated=bool(record.get("truncated", False)),
        )
