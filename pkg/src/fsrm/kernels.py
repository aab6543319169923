"""Training-time formulas with verifiable analytic gradients, plus a toy trainer.

Covers the pairwise preference loss on scalar rewards, the first-token
judging losses (preference + action-space concentration), group-normalized
advantages, the clipped surrogate with KL regularization, and the format /
outcome rewards.  Everything is desk-scale numpy; gradients are exact and
checked against central finite differences in the test suite.

The toy trainer fits a linear-softmax judge over a small vocabulary so every
loss and gradient here is exercised end to end without any LLM.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import GroupTooSmall, TrainingDiverged
from .judge import Label, SlowTranscript

# Reference training settings (recorded, not executed here).
SFT_EPOCHS = 2
SFT_BATCH_SIZE = 32
SFT_LEARNING_RATE_4B = 5e-7
SFT_LEARNING_RATE_8B = 1e-6
DEFAULT_ACTION_WEIGHT = 1.0
RL_STEPS = 400
RL_GROUP_SIZE = 8
RL_TEMPERATURE = 1.0
RL_MAX_TOKENS = 4096
DEFAULT_CLIP_EPSILON = 0.2
DEFAULT_KL_BETA = 0.001

_ADV_STD_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class LogitVector:
    """Logits over a small vocabulary that includes the 'A' and 'B' tokens."""

    tokens: tuple[str, ...]
    logits: np.ndarray

    def __post_init__(self) -> None:
        if len(self.tokens) < 3:
            raise ValueError("vocabulary must have >= 3 tokens so leakage is representable")
        if "A" not in self.tokens or "B" not in self.tokens:
            raise ValueError("vocabulary must contain 'A' and 'B'")
        if self.logits.shape != (len(self.tokens),):
            raise ValueError("logits must be a vector matching the vocabulary")
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("logits must be finite")

    def index(self, token: str) -> int:
        return self.tokens.index(token)

    def probs(self) -> np.ndarray:
        shifted = self.logits - self.logits.max()
        e = np.exp(shifted)
        return e / e.sum()


@dataclass(frozen=True)
class SftConfig:
    """Weights and schedule for the first-token judging objective."""

    action_weight: float = DEFAULT_ACTION_WEIGHT
    learning_rate: float = 0.5
    steps: int = 2000

    def __post_init__(self) -> None:
        if self.action_weight < 0:
            raise ValueError("action_weight must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclass(frozen=True)
class GroupBatch:
    """K sampled trajectories for one prompt, with rewards and logprobs."""

    rewards: np.ndarray
    new_logprobs: np.ndarray
    old_logprobs: np.ndarray
    ref_logprobs: np.ndarray
    clip_epsilon: float = DEFAULT_CLIP_EPSILON
    kl_beta: float = DEFAULT_KL_BETA

    def __post_init__(self) -> None:
        k = len(self.rewards)
        if k < 2:
            raise GroupTooSmall("advantage normalization needs >= 2 trajectories")
        for name in ("new_logprobs", "old_logprobs", "ref_logprobs"):
            if len(getattr(self, name)) != k:
                raise ValueError(f"{name} must match the reward count")
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must lie in (0, 1)")


class PairwiseLoss(NamedTuple):
    loss: float
    grad_reward_w: float
    grad_reward_l: float


def _neg_log_sigmoid(delta: float) -> float:
    # -log sigmoid(delta) == softplus(-delta); stable for |delta| up to ~700.
    return float(np.logaddexp(0.0, -delta))


def bt_pairwise_loss(reward_w: float, reward_l: float) -> PairwiseLoss:
    """Pairwise preference loss on scalar rewards with its analytic gradient.

    loss = -log sigmoid(reward_w - reward_l);
    d/dw = -(1 - sigmoid(delta)), d/dl = +(1 - sigmoid(delta)).
    """
    delta = reward_w - reward_l
    loss = _neg_log_sigmoid(delta)
    # 1 - sigmoid(delta) == sigmoid(-delta) == exp(-softplus(delta))
    slack = float(np.exp(-np.logaddexp(0.0, delta)))
    return PairwiseLoss(loss=loss, grad_reward_w=-slack, grad_reward_l=slack)


def fast_bt_loss(v: LogitVector, z_star: Label) -> tuple[float, np.ndarray]:
    """First-token preference loss over softmax probabilities, full gradient.

    The softmax normalizer cancels in log pi(z*) - log pi(opposite), so the
    loss reduces to the logit gap and non-candidate logits get zero gradient;
    the returned gradient still spans the whole vocabulary.
    """
    w = v.index(z_star.value)
    l = v.index(z_star.other().value)
    delta = float(v.logits[w] - v.logits[l])
    loss = _neg_log_sigmoid(delta)
    slack = float(np.exp(-np.logaddexp(0.0, delta)))  # 1 - sigmoid(delta)
    grad = np.zeros_like(v.logits)
    grad[w] = -slack
    grad[l] = slack
    return loss, grad


def action_loss(v: LogitVector) -> tuple[float, np.ndarray]:
    """Penalty on probability leaking outside the candidate labels.

    loss = -log(pi(A) + pi(B)); the gradient pushes candidate logits up and
    leakage logits down, summing to zero (softmax shift invariance).
    """
    a = v.index("A")
    b = v.index("B")
    lse_all = float(np.logaddexp.reduce(v.logits))
    lse_ab = float(np.logaddexp(v.logits[a], v.logits[b]))
    loss = lse_all - lse_ab
    probs = v.probs()
    grad = probs.copy()
    # Candidate tokens: pi_c - pi_c / (pi_A + pi_B), via the stable lse form.
    for idx in (a, b):
        grad[idx] -= float(np.exp(v.logits[idx] - lse_ab))
    return loss, grad


def sft_loss(v: LogitVector, z_star: Label, cfg: SftConfig) -> tuple[float, np.ndarray]:
    """Preference loss plus weighted action-space penalty; gradients add."""
    bt, bt_grad = fast_bt_loss(v, z_star)
    act, act_grad = action_loss(v)
    return bt + cfg.action_weight * act, bt_grad + cfg.action_weight * act_grad


def group_advantages(rewards: Sequence[float] | np.ndarray) -> np.ndarray:
    """Center and scale terminal rewards within one group.

    Population standard deviation with a small floor; a reward-degenerate
    group comes out all-zero rather than erroring.
    """
    rewards = np.asarray(rewards, dtype=float)
    if rewards.ndim != 1 or len(rewards) < 2:
        raise GroupTooSmall("advantage normalization needs >= 2 trajectories")
    mean = rewards.mean()
    std = rewards.std()
    return (rewards - mean) / (std + _ADV_STD_FLOOR)


class GrpoResult(NamedTuple):
    objective: float
    per_trajectory: np.ndarray
    advantages: np.ndarray
    kl: float


def kl_term(new_logprob: float, ref_logprob: float) -> float:
    """Nonnegative per-sample KL estimate: exp(ref-new) - (ref-new) - 1.

    Unbiased for KL(new || ref) when trajectories are sampled from the new
    policy; see :func:`categorical_kl` for the exact small-vocabulary value.
    """
    diff = ref_logprob - new_logprob
    return float(np.exp(diff) - diff - 1.0)


def grpo_surrogate(batch: GroupBatch, ratio_denominator: str = "ref") -> GrpoResult:
    """Clipped-ratio surrogate with KL regularization over one group.

    The likelihood ratio is taken against the reference policy by default;
    pass ``ratio_denominator="old"`` to use a rollout-time policy snapshot
    instead.
    """
    if ratio_denominator not in ("ref", "old"):
        raise ValueError("ratio_denominator must be 'ref' or 'old'")
    denom = batch.ref_logprobs if ratio_denominator == "ref" else batch.old_logprobs
    advantages = group_advantages(batch.rewards)
    rho = np.exp(np.asarray(batch.new_logprobs, dtype=float) - np.asarray(denom, dtype=float))
    clipped = np.clip(rho, 1 - batch.clip_epsilon, 1 + batch.clip_epsilon)
    per_trajectory = np.minimum(rho * advantages, clipped * advantages)
    kl = float(
        np.mean(
            [kl_term(n, r) for n, r in zip(batch.new_logprobs, batch.ref_logprobs)]
        )
    )
    objective = float(per_trajectory.mean()) - batch.kl_beta * kl
    return GrpoResult(
        objective=objective, per_trajectory=per_trajectory, advantages=advantages, kl=kl
    )


def categorical_kl(p: np.ndarray, q: np.ndarray) -> float:
    """Exact KL(p || q) for categorical distributions (cross-check for kl_term)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def format_reward(transcript: SlowTranscript) -> int:
    """0 for a well-formed two-stage transcript, -1 otherwise."""
    return 0 if transcript.format_ok else -1


def outcome_reward(predicted: Label | None, gold: Label, format_r: int) -> int:
    """1 for a correct verdict, 0 otherwise; applied only under correct format."""
    if format_r not in (0, -1):
        raise ValueError("format reward must be 0 or -1")
    if format_r == -1:
        return 0
    return 1 if predicted == gold else 0


def trajectory_reward(transcript: SlowTranscript, gold: Label) -> int:
    """Combined terminal reward: format penalty plus gated outcome reward."""
    fmt = format_reward(transcript)
    return fmt + outcome_reward(transcript.final_verdict, gold, fmt)


# ---------------------------------------------------------------------------
# Toy fast-judge trainer
# ---------------------------------------------------------------------------

TOY_VOCAB: tuple[str, ...] = ("A", "B") + tuple(f"tok{i}" for i in range(8))
_LEAK_BIAS = 2.0


class CurvePoint(NamedTuple):
    step: int
    loss: float
    accuracy: float
    action_mass: float


@dataclass
class ToyTrainResult:
    weights: np.ndarray
    bias: np.ndarray
    curve: list[CurvePoint]
    final_accuracy: float
    final_action_mass: float


def make_separable_judgments(
    n: int, seed: int = 0, margin: float = 0.3
) -> tuple[np.ndarray, np.ndarray]:
    """Linearly separable 2-feature dataset; label indices 0 (A) / 1 (B)."""
    rng = np.random.default_rng(seed)
    direction = np.array([1.0, -1.0]) / np.sqrt(2.0)
    features = np.empty((0, 2))
    while len(features) < n:
        batch = rng.normal(size=(2 * n, 2))
        keep = np.abs(batch @ direction) >= margin
        features = np.vstack([features, batch[keep]])
    features = features[:n]
    labels = (features @ direction < 0).astype(int)
    return features, labels


def _batch_sft(
    logits: np.ndarray, winner_idx: np.ndarray, action_weight: float
) -> tuple[float, np.ndarray]:
    """Mean loss and per-sample logit gradients; same formulas as the scalar ops."""
    n = logits.shape[0]
    rows = np.arange(n)
    loser_idx = 1 - winner_idx
    delta = logits[rows, winner_idx] - logits[rows, loser_idx]
    bt = np.logaddexp(0.0, -delta)
    slack = np.exp(-np.logaddexp(0.0, delta))
    grad = np.zeros_like(logits)
    grad[rows, winner_idx] -= slack
    grad[rows, loser_idx] += slack

    lse_all = np.logaddexp.reduce(logits, axis=1)
    lse_ab = np.logaddexp(logits[:, 0], logits[:, 1])
    act = lse_all - lse_ab
    probs = np.exp(logits - lse_all[:, None])
    act_grad = probs.copy()
    act_grad[:, 0] -= np.exp(logits[:, 0] - lse_ab)
    act_grad[:, 1] -= np.exp(logits[:, 1] - lse_ab)

    loss = float(np.mean(bt + action_weight * act))
    return loss, (grad + action_weight * act_grad) / n


def toy_train_fast(
    features: np.ndarray,
    labels: Sequence[Label] | np.ndarray,
    cfg: SftConfig = SftConfig(),
    seed: int = 0,
    curve_path: str | Path | None = None,
    curve_every: int = 20,
) -> ToyTrainResult:
    """Gradient descent on the judging objective for a linear-softmax judge.

    The vocabulary carries eight leakage tokens whose biases start high, so
    the action-space penalty has real work to do.  Aborts via
    :class:`TrainingDiverged` if the loss blows past 10x its initial value.
    """
    features = np.asarray(features, dtype=float)
    if isinstance(labels, np.ndarray):
        winner_idx = labels.astype(int)
    else:
        labels = list(labels)
        if labels and isinstance(labels[0], Label):
            winner_idx = np.array([0 if l is Label.A else 1 for l in labels])
        else:
            winner_idx = np.asarray(labels, dtype=int)

    n, dim = features.shape
    vocab_size = len(TOY_VOCAB)
    rng = np.random.default_rng(seed)
    weights = rng.normal(scale=0.1, size=(vocab_size, dim))
    bias = np.zeros(vocab_size)
    bias[2:] = _LEAK_BIAS  # leakage-biased start

    def evaluate(logits: np.ndarray) -> tuple[float, float]:
        probs = np.exp(logits - np.logaddexp.reduce(logits, axis=1)[:, None])
        verdicts = (probs[:, 1] > probs[:, 0]).astype(int)  # ties resolve to A
        acc = float(np.mean(verdicts == winner_idx))
        mass = float(np.mean(probs[:, 0] + probs[:, 1]))
        return acc, mass

    curve: list[CurvePoint] = []
    initial_loss: float | None = None
    loss = float("nan")
    for step in range(cfg.steps + 1):
        logits = features @ weights.T + bias
        loss, grad_logits = _batch_sft(logits, winner_idx, cfg.action_weight)
        if initial_loss is None:
            initial_loss = loss
        if loss > 10 * initial_loss:
            raise TrainingDiverged(f"loss {loss:.3g} exceeded 10x initial at step {step}")
        if step % curve_every == 0 or step == cfg.steps:
            acc, mass = evaluate(logits)
            curve.append(CurvePoint(step=step, loss=loss, accuracy=acc, action_mass=mass))
        if step == cfg.steps:
            break
        weights -= cfg.learning_rate * grad_logits.T @ features
        bias -= cfg.learning_rate * grad_logits.sum(axis=0)

    final = curve[-1]
    if curve_path is not None:
        with Path(curve_path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "accuracy", "action_mass"])
            for point in curve:
                writer.writerow(
                    [point.step, repr(point.loss), repr(point.accuracy), repr(point.action_mass)]
                )
    return ToyTrainResult(
        weights=weights,
        bias=bias,
        curve=curve,
        final_accuracy=final.accuracy,
        final_action_mass=final.action_mass,
    )
