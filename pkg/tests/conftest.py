"""Shared fixtures: deterministic simulator setups and sample factories."""

from __future__ import annotations

import pytest

from fsrm.backends import SimSpec, StratumSpec, sim_configure
from fsrm.synthetic import make_samples


def clean_stratum(**overrides) -> StratumSpec:
    """A well-behaved stratum: committal transcripts, moderate confidences."""
    base = dict(
        fast_accuracy=0.8,
        slow_accuracy=0.95,
        mean_intuition_conf=0.6,
        mean_token_conf=14.0,
        slow_tokens_lo=50,
        slow_tokens_hi=400,
        noncommittal_rate=0.0,
        intuition_spread=0.3,
        token_conf_spread=2.0,
    )
    base.update(overrides)
    return StratumSpec(**base)


@pytest.fixture
def small_world():
    """Twenty samples over two domains with a single-stratum simulator."""
    samples = make_samples(20, domains=("chat", "math"), difficulties=("easy", "hard"), seed=3)
    backend = sim_configure(SimSpec.single(clean_stratum(), seed=7), samples)
    return samples, backend
