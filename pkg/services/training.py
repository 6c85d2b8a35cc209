"""
Training loop: Adam with inverse square root warmup, dev-based model
selection and patience early stopping.

Every `eval_every` updates the model is scored on the dev set (teacher-forced
loss and greedy BLEU). The checkpoint with the best dev greedy BLEU is kept;
training stops after `patience` evaluations without improvement, at
`total_steps`, or with a NumericError as soon as the loss is not finite.
"""

import copy
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from services import tensor as T
from services.data import IdPair, Vocab, batch_iter, decode_line, keep_pair, make_batch
from services.decode import greedy_decode
from services.evaluation import corpus_bleu
from services.losses import LossSpec, Reduction, batch_loss
from services.model import Checkpoint, bind_params, forward_teacher_forced
from services.optim import AdamInverseSqrtWithWarmup, OptimizerConfig
from utils.errors import DataError, NumericError
from utils.logger import logger


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    log: List[Dict[str, float]] = field(default_factory=list)
    best_dev_bleu: float = float("-inf")
    stopped_early: bool = False

    @property
    def final_train_loss(self) -> float:
        return self.log[-1]["train_loss"] if self.log else float("nan")


def loss_and_grads(
    ckpt: Checkpoint,
    spec: LossSpec,
    batch,
    dropout_rng: Optional[np.random.Generator] = None,
    reduction: Optional[Reduction] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """One forward and backward pass over a batch."""
    tape = T.GradTape()
    params = bind_params(ckpt, tape)
    logits = forward_teacher_forced(ckpt, batch.source, batch.target_in, params, dropout_rng)
    loss = batch_loss(spec, logits, batch.target_out, reduction)
    T.backward(loss, tape)
    return loss.item(), {name: tensor.grad for name, tensor in params.items()}


def dev_loss(ckpt: Checkpoint, spec: LossSpec, pairs: Sequence[IdPair], batch_size: int) -> float:
    """Teacher-forced loss per non-PAD target token over the whole dev set, without dropout."""
    total, tokens = 0.0, 0
    for start in range(0, len(pairs), batch_size):
        batch = make_batch(pairs[start : start + batch_size])
        logits = forward_teacher_forced(ckpt, batch.source, batch.target_in)
        total += batch_loss(spec, logits, batch.target_out).item() * batch.num_tokens
        tokens += batch.num_tokens
    return total / tokens


def dev_greedy_bleu(ckpt: Checkpoint, spec: LossSpec, pairs: Sequence[IdPair], target_vocab: Vocab) -> float:
    hypotheses = [decode_line(target_vocab, greedy_decode(ckpt, spec.head, src).tokens) for src, _ in pairs]
    references = [decode_line(target_vocab, tgt) for _, tgt in pairs]
    return corpus_bleu(hypotheses, references).bleu


def _snapshot(ckpt: Checkpoint, optimizer: AdamInverseSqrtWithWarmup, step: int) -> Checkpoint:
    return Checkpoint(
        config=ckpt.config,
        params={name: values.copy() for name, values in ckpt.params.items()},
        step=step,
        optimizer={name: values.copy() for name, values in optimizer.state_dict().items()},
        loss_spec=ckpt.loss_spec,
        metadata=copy.deepcopy(ckpt.metadata),
    )


def train(
    initial: Checkpoint,
    spec: LossSpec,
    optimizer_config: OptimizerConfig,
    train_pairs: Sequence[IdPair],
    dev_pairs: Sequence[IdPair],
    target_vocab: Vocab,
    seed: int,
    max_len: int,
    reduction: Optional[Reduction] = None,
    record_timings: bool = True,
    on_evaluation: Optional[Callable[[Dict[str, float]], None]] = None,
) -> TrainResult:
    ckpt = _snapshot(initial, AdamInverseSqrtWithWarmup(optimizer_config), initial.step)
    ckpt.loss_spec = spec.model_dump(by_alias=True)
    optimizer = AdamInverseSqrtWithWarmup(optimizer_config)
    if initial.optimizer:
        optimizer.load_state_dict(initial.optimizer)

    dev_pairs = [pair for pair in dev_pairs if keep_pair(pair[0], pair[1], max_len)]
    if not dev_pairs:
        raise DataError("no dev sentence pairs survive length filtering")
    stream = batch_iter(train_pairs, optimizer_config.batch_size, max_len, seed=seed)

    logger.info(
        f"Training {spec.describe()} for at most {optimizer_config.total_steps} steps "
        f"on {len(stream.pairs)} pairs ({stream.dropped} dropped), {len(dev_pairs)} dev pairs."
    )
    result = TrainResult(best=_snapshot(ckpt, optimizer, 0), last=ckpt)
    started = time.perf_counter()
    losses: List[float] = []
    evaluations_without_gain = 0

    for step, batch in enumerate(stream, start=1):
        dropout_rng = np.random.default_rng([seed, step])
        loss, grads = loss_and_grads(ckpt, spec, batch, dropout_rng, reduction)
        if not np.isfinite(loss):
            raise NumericError(f"training diverged at step {step}: loss is {loss}", details={"step": step})
        learning_rate = optimizer.learning_rate
        optimizer.step(ckpt.params, grads)
        losses.append(loss)

        last_step = step >= optimizer_config.total_steps
        if step % optimizer_config.eval_every == 0 or last_step:
            row = {
                "step": step,
                "train_loss": float(np.mean(losses)),
                "dev_loss": dev_loss(ckpt, spec, dev_pairs, optimizer_config.batch_size),
                "dev_greedy_bleu": dev_greedy_bleu(ckpt, spec, dev_pairs, target_vocab),
                "learning_rate": learning_rate,
                "elapsed_seconds": time.perf_counter() - started if record_timings else 0.0,
            }
            losses = []
            result.log.append(row)
            logger.info(
                f"step {step}: train_loss={row['train_loss']:.4f} dev_loss={row['dev_loss']:.4f} "
                f"dev_bleu={row['dev_greedy_bleu']:.2f} lr={learning_rate:.3g}"
            )
            if on_evaluation is not None:
                on_evaluation(row)

            if row["dev_greedy_bleu"] > result.best_dev_bleu:
                result.best_dev_bleu = row["dev_greedy_bleu"]
                result.best = _snapshot(ckpt, optimizer, step)
                evaluations_without_gain = 0
            else:
                evaluations_without_gain += 1
                if evaluations_without_gain >= optimizer_config.patience:
                    logger.info(f"No dev improvement for {evaluations_without_gain} evaluations; stopping at step {step}.")
                    result.stopped_early = True
                    result.last = _snapshot(ckpt, optimizer, step)
                    break
        if last_step:
            result.last = _snapshot(ckpt, optimizer, step)
            break

    return result
