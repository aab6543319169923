"""Synthetic preference datasets for simulator-backed runs and tests."""

from __future__ import annotations

import hashlib
from typing import Sequence

from .judge import Label, PreferenceSample

_QUESTIONS = (
    "Summarize the trade-offs between the two designs.",
    "Which proof is correct, and why?",
    "Explain the bug in the following function.",
    "Draft a polite reply declining the invitation.",
    "What is the closed form of this recurrence?",
)


def make_samples(
    n: int,
    domains: Sequence[str] = ("general",),
    difficulties: Sequence[str | None] = (None,),
    seed: int = 0,
    id_prefix: str = "s",
) -> list[PreferenceSample]:
    """Fabricate n samples cycling over the given strata, gold labels seeded."""
    samples = []
    for i in range(n):
        sid = f"{id_prefix}{i:05d}"
        digest = hashlib.sha256(f"{seed}|{sid}|gold".encode()).digest()
        gold = Label.A if digest[0] % 2 == 0 else Label.B
        samples.append(
            PreferenceSample(
                id=sid,
                domain=domains[i % len(domains)],
                difficulty=difficulties[i % len(difficulties)],
                prompt=f"{_QUESTIONS[i % len(_QUESTIONS)]} (case {i})",
                response_a=f"First candidate answer for case {i}.",
                response_b=f"Second candidate answer for case {i}.",
                gold=gold,
            )
        )
    return samples
