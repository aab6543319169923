"""Preference-judging domain types, judge-prompt construction, and output parsing.

A judge prompt presents one user question and two candidate answers and asks
the model to emit a verdict token first ('A', 'B', or 'tie'); 'tie' opens a
``<think>`` reasoning block followed by a final verdict.  This module owns the
prompt text lifecycle (rendering, trigger augmentation) and the parsers for
both the one-token fast output and the full slow transcript.  Everything here
is pure and stateless.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import AlreadyAugmented, MissingPlaceholder, UnparseableFastToken

DEFAULT_TRIGGER = "tie"

PLACEHOLDERS = ("{question}", "{answer_a}", "{answer_b}")
_PLACEHOLDER_RE = re.compile(r"\{(question|answer_a|answer_b)\}")
_WORD_RE = re.compile(r"[A-Za-z0-9]+")
_THINK_OPEN = "<think>"
_THINK_CLOSE = "</think>"


class Label(Enum):
    """One of the two candidate answers."""

    A = "A"
    B = "B"

    def other(self) -> "Label":
        return Label.B if self is Label.A else Label.A


class FastToken(Enum):
    """What the first completion token can resolve to.

    'tie' is a deferral, not a verdict; converting it to a :class:`Label`
    is an error by design.
    """

    A = "A"
    B = "B"
    TIE = "tie"

    def to_label(self) -> Label:
        if self is FastToken.TIE:
            raise ValueError("'tie' is a deferral token and has no label equivalent")
        return Label(self.value)


@dataclass(frozen=True)
class LabelTokenSets:
    """Surface forms a backend may emit for each candidate token.

    Tokenizers may or may not fold a leading space into the token, so each
    label maps to a set of exact token strings.  Probability mass for a label
    is summed over its whole set.
    """

    a_forms: frozenset[str] = frozenset({"A", " A"})
    b_forms: frozenset[str] = frozenset({"B", " B"})
    tie_forms: frozenset[str] = frozenset({"tie", " tie", "Tie"})

    def label_forms(self) -> frozenset[str]:
        """Surface forms of the two candidate labels (excludes 'tie')."""
        return self.a_forms | self.b_forms

    def classify(self, token: str) -> FastToken | None:
        """Map a raw token to a FastToken: exact match first, then trimmed."""
        table = (
            (self.a_forms, FastToken.A),
            (self.b_forms, FastToken.B),
            (self.tie_forms, FastToken.TIE),
        )
        for forms, value in table:
            if token in forms:
                return value
        trimmed = token.strip()
        for forms, value in table:
            if trimmed in {form.strip() for form in forms}:
                return value
        return None


DEFAULT_LABEL_SETS = LabelTokenSets()


@dataclass(frozen=True)
class PreferenceSample:
    """One benchmark row: a prompt, two candidate responses, and a gold label."""

    id: str
    domain: str
    prompt: str
    response_a: str
    response_b: str
    gold: Label
    difficulty: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("sample id must be non-empty")
        for field_name in ("prompt", "response_a", "response_b"):
            if not getattr(self, field_name):
                raise ValueError(f"sample {self.id!r}: {field_name} must be non-empty")
        if not isinstance(self.gold, Label):
            raise ValueError(f"sample {self.id!r}: gold must be a Label")

    def swapped(self) -> "PreferenceSample":
        """The same comparison with the answers in the opposite order.

        Gets a distinct id so deterministic backends draw an independent
        judgment for the swapped presentation.
        """
        return replace(
            self,
            id=f"{self.id}#swap",
            response_a=self.response_b,
            response_b=self.response_a,
            gold=self.gold.other(),
        )


@dataclass(frozen=True)
class JudgePrompt:
    """A rendered judge prompt, optionally carrying an appended trigger.

    ``rendered_text`` always contains the full prompt text; when
    ``trigger_appended`` is set it ends with ``trigger``.  ``sample_id`` lets
    keyed backends (simulator, replay) identify the originating sample.
    """

    rendered_text: str
    trigger_appended: bool = False
    trigger: str | None = None
    sample_id: str | None = None


@dataclass(frozen=True)
class SlowTranscript:
    """Parsed full generation from a slow pass.

    ``format_ok`` requires exactly one well-nested think block and the last
    alphabetic token after it to be the verdict.  ``final_verdict`` is more
    lenient: the last standalone 'A' or 'B' after the think block (or anywhere,
    if no block closed), so usable verdicts survive sloppy formatting.
    """

    raw_text: str
    think_block: str | None
    final_verdict: Label | None
    format_ok: bool


@lru_cache(maxsize=1)
def default_template() -> str:
    """The packaged judge-prompt template."""
    return (
        resources.files("fsrm")
        .joinpath("templates/adaptive_judge.txt")
        .read_text(encoding="utf-8")
    )


def load_template(path: str | Path) -> str:
    return Path(path).read_text(encoding="utf-8")


def build_judge_prompt(sample: PreferenceSample, template: str | None = None) -> JudgePrompt:
    """Render the judge prompt for one sample.

    Substitution is pure text insertion in a single pass: inserted content is
    never rescanned, so responses containing placeholder-like text cannot
    corrupt the prompt.  Raises :class:`MissingPlaceholder` if the template
    lacks any of the three slots.
    """
    text = default_template() if template is None else template
    missing = [p for p in PLACEHOLDERS if p not in text]
    if missing:
        raise MissingPlaceholder(f"template lacks placeholder(s): {', '.join(missing)}")
    values = {
        "question": sample.prompt,
        "answer_a": sample.response_a,
        "answer_b": sample.response_b,
    }
    rendered = _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], text)
    return JudgePrompt(rendered_text=rendered, trigger_appended=False, sample_id=sample.id)


def augment_with_trigger(prompt: JudgePrompt, trigger: str = DEFAULT_TRIGGER) -> JudgePrompt:
    """Append the slow-thinking trigger, producing the augmented prompt.

    Plain concatenation, no separator.  The original prompt is unmodified.
    """
    if prompt.trigger_appended:
        raise AlreadyAugmented("prompt already carries a trigger token")
    if not trigger:
        raise ValueError("trigger must be non-empty")
    return replace(
        prompt,
        rendered_text=prompt.rendered_text + trigger,
        trigger_appended=True,
        trigger=trigger,
    )


def parse_fast_token(
    first_token_text: str, label_sets: LabelTokenSets = DEFAULT_LABEL_SETS
) -> FastToken:
    """Resolve the backend's first completion token to A, B, or tie."""
    token = label_sets.classify(first_token_text)
    if token is None:
        raise UnparseableFastToken(f"first token {first_token_text!r} matches no configured surface form")
    return token


def parse_slow_transcript(text: str) -> SlowTranscript:
    """Extract the think block and final verdict from a slow generation.

    The verdict scan runs from the end over standalone alphanumeric tokens;
    real generations append punctuation or trailing prose after the mandated
    last-token verdict, and truncated ones may have no think block at all.
    """
    think_block: str | None = None
    tail = text
    open_at = text.find(_THINK_OPEN)
    if open_at != -1:
        close_at = text.find(_THINK_CLOSE, open_at + len(_THINK_OPEN))
        if close_at != -1:
            think_block = text[open_at + len(_THINK_OPEN) : close_at]
            tail = text[close_at + len(_THINK_CLOSE) :]

    tokens = _WORD_RE.findall(tail)
    verdict: Label | None = None
    for token in reversed(tokens):
        if token in ("A", "B"):
            verdict = Label(token)
            break

    well_nested = (
        think_block is not None
        and text.count(_THINK_OPEN) == 1
        and text.count(_THINK_CLOSE) == 1
    )
    alphabetic = [t for t in tokens if t.isalpha()]
    format_ok = well_nested and bool(alphabetic) and alphabetic[-1] in ("A", "B")
    return SlowTranscript(
        raw_text=text, think_block=think_block, final_verdict=verdict, format_ok=format_ok
    )


def render_transcript(think_block: str, verdict: Label) -> str:
    """Canonical serialization of a parsed transcript (think block + verdict)."""
    return f"{_THINK_OPEN}{think_block}{_THINK_CLOSE}\n{verdict.value}"
