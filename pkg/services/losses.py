"""
Training objectives and sequence scoring.

SCONES treats every vocabulary entry as its own binary classifier: the gold
token is pushed towards "valid extension" (L+) and every other token towards
"invalid extension" (L-), the latter weighted by alpha. With label smoothing
lambda both components become binary cross-entropies against a smoothed
target. The inverse probability 1 - sigmoid(z) is clamped from below before
its log is taken so saturated logits stay finite.

The softmax baseline is plain cross-entropy without label smoothing.
"""

from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing_extensions import Annotated

from config.app import BOS_ID, EOS_ID, PAD_ID
from services import tensor as T
from services.model import Checkpoint, forward_teacher_forced
from services.tensor import Tensor, log_sigmoid_values, log_softmax_values
from utils.errors import DataError, DomainError

Head = Literal["softmax", "scones"]
Reduction = Literal["token", "sentence"]

CLAMP_FLOOR = 1.0e-30


class LossSpec(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    head: Annotated[Head, Field(description="Output activation and loss: softmax or scones.")] = "scones"
    alpha: Annotated[float, Field(gt=0.0, description="Weight of the negative SCONES component.")] = 1.0
    lambda_: Annotated[float, Field(alias="lambda", ge=0.0, le=1.0, description="Label smoothing factor.")] = 0.0
    clamp_floor: Annotated[float, Field(gt=0.0, description="Lower bound for 1 - sigmoid(z) before the log.")] = CLAMP_FLOOR
    reduction: Annotated[Reduction, Field(description="Average over all tokens of the batch or per sentence first.")] = "token"

    @model_validator(mode="before")
    @classmethod
    def softmax_without_smoothing(cls, data):
        # The baseline is trained without label smoothing
        if isinstance(data, dict) and data.get("head") == "softmax":
            data = {key: value for key, value in data.items() if key not in ("lambda", "lambda_")}
        return data

    def describe(self) -> str:
        if self.head == "softmax":
            return "head=softmax"
        return f"head=scones alpha={self.alpha!r} lambda={self.lambda_!r}"


def _check_targets(targets: np.ndarray, vocab_size: int) -> None:
    if targets.size and (targets.min() < 0 or targets.max() >= vocab_size):
        raise DomainError(f"target id out of range [0, {vocab_size})")


def scones_token_terms(
    logits: Tensor, targets, lambda_: float = 0.0, clamp_floor: float = CLAMP_FLOOR
) -> Tuple[Tensor, Tensor]:
    """Positive and negative SCONES components per position, both shaped like `targets`."""
    logits = T.as_tensor(logits)
    targets = np.asarray(targets)
    _check_targets(targets, logits.shape[-1])
    smooth = float(lambda_)

    true_logprob = T.log_sigmoid(logits)
    false_logprob = T.log(T.clamp_min(T.sub(1.0, T.exp(true_logprob)), clamp_floor))
    gold_true = T.gather_last(true_logprob, targets)
    gold_false = T.gather_last(false_logprob, targets)

    positive = T.sub(T.mul(gold_true, -(1.0 - smooth)), T.mul(gold_false, smooth))
    gold_as_negative = T.sub(T.mul(gold_false, -(1.0 - smooth)), T.mul(gold_true, smooth))
    all_negative = T.sub(T.mul(false_logprob, -(1.0 - smooth)), T.mul(true_logprob, smooth))
    negative = T.sub(T.reduce_sum(all_negative, axis=-1), gold_as_negative)
    return positive, negative


def scones_token_components(
    logits, gold: int, lambda_: float = 0.0, clamp_floor: float = CLAMP_FLOOR
) -> Tuple[float, float]:
    positive, negative = scones_token_terms(T.as_tensor(logits), np.int64(gold), lambda_, clamp_floor)
    return positive.item(), negative.item()


def scones_token_loss(
    logits, gold: int, alpha: float = 1.0, lambda_: float = 0.0, clamp_floor: float = CLAMP_FLOOR
) -> float:
    """L+ + alpha * L- for one position."""
    positive, negative = scones_token_components(logits, gold, lambda_, clamp_floor)
    return positive + alpha * negative


def _reduce(token_losses: Tensor, targets: np.ndarray, reduction: Reduction) -> Tensor:
    weights = (targets != PAD_ID).astype(token_losses.dtype)
    total = weights.sum()
    if total == 0:
        raise DataError("cannot compute a loss on an all-PAD batch")
    masked = T.mul(token_losses, Tensor._wrap(weights))
    if reduction == "token":
        return T.mul(T.reduce_sum(masked), 1.0 / total)
    if reduction != "sentence":
        raise ValueError(f"unknown reduction '{reduction}'")
    lengths = weights.sum(axis=-1)
    present = lengths > 0
    per_sentence = T.reduce_sum(masked, axis=-1)
    scale = np.where(present, 1.0 / np.maximum(lengths, 1.0), 0.0) / present.sum()
    return T.reduce_sum(T.mul(per_sentence, Tensor._wrap(scale.astype(token_losses.dtype))))


def scones_batch_loss(
    logits: Tensor,
    targets,
    alpha: float = 1.0,
    lambda_: float = 0.0,
    clamp_floor: float = CLAMP_FLOOR,
    reduction: Reduction = "token",
) -> Tensor:
    """SCONES loss over a padded batch.

    The default reduction divides the summed non-PAD token losses by the
    number of non-PAD tokens in the whole batch. `reduction="sentence"`
    averages per sentence first and then over sentences.
    """
    targets = np.asarray(targets)
    logits = T.as_tensor(logits)
    if logits.shape[:-1] != targets.shape:
        raise DataError(f"logits {logits.shape} do not match targets {targets.shape}")
    positive, negative = scones_token_terms(logits, targets, lambda_, clamp_floor)
    return _reduce(T.add(positive, T.mul(negative, alpha)), targets, reduction)


def softmax_xent_batch_loss(logits: Tensor, targets, reduction: Reduction = "token") -> Tensor:
    """Mean cross-entropy over non-PAD tokens."""
    targets = np.asarray(targets)
    logits = T.as_tensor(logits)
    if logits.shape[:-1] != targets.shape:
        raise DataError(f"logits {logits.shape} do not match targets {targets.shape}")
    _check_targets(targets, logits.shape[-1])
    token_losses = T.neg(T.gather_last(T.log_softmax(logits, axis=-1), targets))
    return _reduce(token_losses, targets, reduction)


def batch_loss(spec: LossSpec, logits: Tensor, targets, reduction: Optional[Reduction] = None) -> Tensor:
    reduction = reduction or spec.reduction
    if spec.head == "softmax":
        return softmax_xent_batch_loss(logits, targets, reduction)
    return scones_batch_loss(logits, targets, spec.alpha, spec.lambda_, spec.clamp_floor, reduction)


def step_logprobs(head: Head, logits: np.ndarray) -> np.ndarray:
    """Per-token log scores of one decoding step under the given head."""
    if head == "scones":
        return log_sigmoid_values(logits)
    if head == "softmax":
        return log_softmax_values(np.asarray(logits), axis=-1)
    raise ValueError(f"unknown head '{head}'")


def _validate_target(target: Sequence[int]) -> List[int]:
    target = [int(t) for t in target]
    if not target or target[-1] != EOS_ID:
        raise DataError("target must end with EOS")
    if any(t in (EOS_ID, PAD_ID, BOS_ID) for t in target[:-1]):
        raise DataError("target contains an interior EOS, PAD or BOS")
    return target


def prefix_logprob(head: Head, ckpt: Checkpoint, source_ids: Sequence[int], tokens: Sequence[int]) -> float:
    """Sum of per-step log scores of `tokens` (no BOS), finished or not."""
    tokens = [int(t) for t in tokens]
    if not tokens:
        return 0.0
    target_in = np.array([[BOS_ID] + tokens[:-1]])
    logits = forward_teacher_forced(ckpt, np.array([list(source_ids)]), target_in).values[0]
    logprobs = step_logprobs(head, logits)
    return float(np.sum(logprobs[np.arange(len(tokens)), tokens]))


def sequence_logprob(
    head: Head, ckpt: Checkpoint, source_ids: Sequence[int], target_ids: Sequence[int]
) -> float:
    """log P(y | x) of an EOS-terminated target: sum of log sigmoid (scones) or log softmax (softmax) terms.

    The empty translation <EOS> has exactly one term.
    """
    return prefix_logprob(head, ckpt, source_ids, _validate_target(target_ids))


def scones_reference_loss(logits: np.ndarray, gold: int, alpha: float, lambda_: float) -> float:
    """Scalar re-statement of the smoothed SCONES token loss on raw arrays, without clamping.

    Used to cross-check the tensor implementation; 1 - sigmoid(z) is evaluated
    as sigmoid(-z) so the value is exact where no clamp is needed.
    """
    logits = np.asarray(logits, dtype=np.float64)
    true_lp = log_sigmoid_values(logits)
    false_lp = log_sigmoid_values(-logits)
    positive = -(1 - lambda_) * true_lp[gold] - lambda_ * false_lp[gold]
    others = np.arange(logits.shape[-1]) != gold
    negative = -np.sum((1 - lambda_) * false_lp[others] + lambda_ * true_lp[others])
    return float(positive + alpha * negative)
