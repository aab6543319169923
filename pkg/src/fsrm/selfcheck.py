"""Built-in verification suites: gradient checks, metric recounts, gating rules.

Each suite re-derives expected values through an independent route (central
finite differences, brute-force recounting, exhaustive enumeration) and
compares against the package's implementations.  `fsrm selfcheck` prints one
line per suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .confidence import ConfidencePair, ThresholdPair, should_activate_slow
from .judge import Label, parse_slow_transcript, render_transcript
from .kernels import (
    GroupBatch,
    LogitVector,
    SftConfig,
    action_loss,
    bt_pairwise_loss,
    categorical_kl,
    fast_bt_loss,
    format_reward,
    group_advantages,
    grpo_surrogate,
    kl_term,
    outcome_reward,
    sft_loss,
)

_FD_STEP = 1e-6
_GRAD_TOL = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _central_diff(f: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(x)
    for i in range(len(x)):
        hi = x.copy()
        lo = x.copy()
        hi[i] += _FD_STEP
        lo[i] -= _FD_STEP
        grad[i] = (f(hi) - f(lo)) / (2 * _FD_STEP)
    return grad


def _grad_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(1.0, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_gradients(seed: int = 0, n_vectors: int = 50) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_vectors):
        size = int(rng.integers(3, 12))
        tokens = ("A", "B") + tuple(f"t{i}" for i in range(size - 2))
        logits = rng.normal(scale=3.0, size=size)
        z_star = Label.A if rng.random() < 0.5 else Label.B
        cfg = SftConfig(action_weight=float(rng.uniform(0.1, 3.0)))

        cases = [
            (lambda x: fast_bt_loss(LogitVector(tokens, x), z_star),),
            (lambda x: action_loss(LogitVector(tokens, x)),),
            (lambda x: sft_loss(LogitVector(tokens, x), z_star, cfg),),
        ]
        for (fn,) in cases:
            _, analytic = fn(logits)
            numeric = _central_diff(lambda x: fn(x)[0], logits)
            worst = max(worst, _grad_error(analytic, numeric))

        rewards = rng.normal(scale=4.0, size=2)
        result = bt_pairwise_loss(rewards[0], rewards[1])
        numeric = _central_diff(
            lambda x: bt_pairwise_loss(x[0], x[1]).loss, rewards.copy()
        )
        analytic = np.array([result.grad_reward_w, result.grad_reward_l])
        worst = max(worst, _grad_error(analytic, numeric))
    return CheckResult(
        "gradients", worst <= _GRAD_TOL, f"max relative error {worst:.2e} over {n_vectors} draws"
    )


def check_grpo(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    problems = []

    for _ in range(50):
        rewards = rng.normal(size=int(rng.integers(2, 16)))
        if rewards.std() < 1e-3:
            continue
        adv = group_advantages(rewards)
        if abs(adv.mean()) > 1e-9 or abs(adv.std() - 1) > 1e-4:
            problems.append("advantage normalization off")
            break

    # Clip arithmetic, worked by hand.
    batch = GroupBatch(
        rewards=np.array([1.0, 0.0]),
        new_logprobs=np.array([0.0, 0.0]),
        old_logprobs=np.array([0.0, 0.0]),
        ref_logprobs=np.array([0.0, 0.0]),
    )
    if not np.allclose(
        grpo_surrogate(batch).per_trajectory, group_advantages(batch.rewards)
    ):
        problems.append("unit-ratio surrogate should equal the advantages")

    # Sampled KL estimator against the exact categorical value.
    p = np.array([0.6, 0.25, 0.1, 0.05])
    q = np.array([0.3, 0.3, 0.2, 0.2])
    draws = rng.choice(len(p), size=100_000, p=p)
    estimate = float(np.mean([kl_term(np.log(p[i]), np.log(q[i])) for i in draws]))
    exact = categorical_kl(p, q)
    if abs(estimate - exact) / exact > 0.02:
        problems.append(f"kl estimate {estimate:.4f} vs exact {exact:.4f}")

    return CheckResult("grpo", not problems, "; ".join(problems) or "advantages, clip, and KL agree")


def check_reward_gating() -> CheckResult:
    good = parse_slow_transcript(render_transcript("weighing both", Label.A))
    bad = parse_slow_transcript("no structure at all")
    for transcript in (good, bad):
        fmt = format_reward(transcript)
        for predicted in (Label.A, Label.B, None):
            for gold in (Label.A, Label.B):
                reward = outcome_reward(predicted, gold, fmt)
                if fmt == -1 and reward != 0:
                    return CheckResult(
                        "reward-gating", False, "outcome reward fired under a format penalty"
                    )
                if fmt == 0 and reward != int(predicted == gold):
                    return CheckResult("reward-gating", False, "outcome reward mis-scored")
    return CheckResult("reward-gating", True, "outcome reward correctly gated on format")


def check_routing_monotonicity(seed: int = 0, n_populations: int = 200) -> CheckResult:
    rng = np.random.default_rng(seed)
    for _ in range(n_populations):
        confs = [
            ConfidencePair(float(rng.uniform(0, 1)), float(rng.uniform(0, 30)))
            for _ in range(40)
        ]
        lo = ThresholdPair(float(rng.uniform(0, 1)), float(rng.uniform(0, 30)))
        hi = ThresholdPair(
            lo.tau_intuition + float(rng.uniform(0, 0.5)),
            lo.tau_token + float(rng.uniform(0, 10)),
        )
        before = {i for i, c in enumerate(confs) if should_activate_slow(c, lo)}
        after = {i for i, c in enumerate(confs) if should_activate_slow(c, hi)}
        if not before <= after:
            return CheckResult(
                "routing-monotonicity", False, "raising thresholds shrank the activated set"
            )
    return CheckResult(
        "routing-monotonicity", True, f"set inclusion held over {n_populations} populations"
    )


def check_metrics_recount(seed: int = 0, n_runs: int = 30) -> CheckResult:
    # Local import: metrics pulls in the router module.
    from .metrics import ALL, accuracy, fast_rate, token_savings
    from .router import JudgmentRecord, Mode

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_runs):
        n = int(rng.integers(5, 60))
        hybrid = []
        slow = []
        for i in range(n):
            activated = bool(rng.random() < 0.5)
            slow_tokens = int(rng.integers(10, 500))
            hybrid.append(
                JudgmentRecord(
                    sample_id=f"r{i}",
                    mode=Mode.HYBRID,
                    domain="d",
                    final_verdict=Label.A,
                    activated_slow=activated,
                    completion_tokens=1 + slow_tokens if activated else 1,
                    correct=bool(rng.random() < 0.8),
                )
            )
            slow.append(
                JudgmentRecord(
                    sample_id=f"r{i}",
                    mode=Mode.SLOW,
                    domain="d",
                    final_verdict=Label.A,
                    activated_slow=True,
                    completion_tokens=slow_tokens,
                    correct=bool(rng.random() < 0.9),
                )
            )
        # Brute-force recount via plain loops.
        n_correct = 0
        n_fast = 0
        h_total = 0
        s_total = 0
        for rec in hybrid:
            if rec.correct:
                n_correct += 1
            if not rec.activated_slow:
                n_fast += 1
            h_total += rec.completion_tokens
        for rec in slow:
            s_total += rec.completion_tokens
        worst = max(
            worst,
            abs(accuracy(hybrid, ALL) - n_correct / n),
            abs(fast_rate(hybrid, ALL) - n_fast / n),
            abs(token_savings(hybrid, slow, ALL) - (1 - h_total / s_total)),
        )
    return CheckResult(
        "metrics-recount", worst <= 1e-12, f"max deviation {worst:.2e} over {n_runs} runs"
    )


def run_all(seed: int = 0) -> list[CheckResult]:
    return [
        check_gradients(seed),
        check_grpo(seed),
        check_reward_gating(),
        check_routing_monotonicity(seed),
        check_metrics_recount(seed),
    ]
