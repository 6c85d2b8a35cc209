"""
A trained model together with its vocabularies and loss spec, as written by
the train command: `<dir>/best.ckpt`, `<dir>/last.ckpt`, `<dir>/source.vocab`,
`<dir>/target.vocab` and `<dir>/train_log.csv`.
"""

import time
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from config.app import EOS_ID
from services.checkpoint import load_checkpoint, save_checkpoint
from services.data import (
    Vocab,
    build_vocab,
    decode_line,
    encode_line,
    encode_parallel,
    load_parallel,
    load_vocab,
    save_vocab,
)
from services.decode import (
    DecodeResult,
    beam_decode,
    decode_many,
    enumerate_decode,
    exact_decode,
    force_score,
    greedy_decode,
)
from services.losses import LossSpec
from services.model import Checkpoint, init_params
from services.training import TrainResult, train
from utils.csv_io import write_csv
from utils.errors import ConfigError, DataError
from utils.experiment_config import ExperimentConfig
from utils.logger import logger

SOURCE_VOCAB_FILE = "source.vocab"
TARGET_VOCAB_FILE = "target.vocab"


@dataclass
class ModelBundle:
    ckpt: Checkpoint
    spec: LossSpec
    source_vocab: Vocab
    target_vocab: Vocab

    @property
    def head(self) -> str:
        return self.spec.head

    @property
    def label(self) -> str:
        return "softmax" if self.head == "softmax" else f"scones alpha={self.spec.alpha:g}"


def load_bundle(checkpoint_path: Union[str, Path]) -> ModelBundle:
    checkpoint_path = Path(checkpoint_path)
    ckpt = load_checkpoint(checkpoint_path)
    folder = checkpoint_path.parent
    source_vocab = load_vocab(folder / ckpt.metadata.get("source_vocab", SOURCE_VOCAB_FILE))
    target_vocab = load_vocab(folder / ckpt.metadata.get("target_vocab", TARGET_VOCAB_FILE))
    if len(source_vocab) != ckpt.config.source_vocab_size or len(target_vocab) != ckpt.config.target_vocab_size:
        raise DataError(
            "vocabulary does not match the checkpoint",
            details={
                "source": [len(source_vocab), ckpt.config.source_vocab_size],
                "target": [len(target_vocab), ckpt.config.target_vocab_size],
            },
        )
    if not ckpt.loss_spec:
        raise DataError(f"checkpoint {checkpoint_path} does not record its loss")
    return ModelBundle(ckpt, LossSpec.model_validate(ckpt.loss_spec), source_vocab, target_vocab)


def translate(
    bundle: ModelBundle,
    sources: Sequence[Sequence[int]],
    mode: str,
    beam_size: int = 4,
    max_len: Optional[int] = None,
    max_states: Optional[int] = None,
    threads: int = 1,
) -> Tuple[List[DecodeResult], float]:
    """Decode every sentence and return the results with the total wall time."""
    ckpt, head = bundle.ckpt, bundle.head
    if mode == "greedy":
        decoder = partial(greedy_decode, ckpt, head, max_len=max_len)
    elif mode == "beam":
        decoder = lambda source: beam_decode(ckpt, head, source, beam_size, max_len)[0]  # noqa: E731
    elif mode == "exact":
        extra = {} if max_states is None else {"max_states": max_states}
        decoder = partial(exact_decode, ckpt, head, max_len=max_len, **extra)
    elif mode == "enumerate":
        decoder = partial(enumerate_decode, ckpt, head, max_len=max_len)
    else:
        raise ConfigError(f"unknown decode mode '{mode}'")
    started = time.perf_counter()
    results = decode_many(decoder, sources, threads)
    return results, time.perf_counter() - started


def encode_sources(bundle: ModelBundle, lines: Sequence[str]) -> List[List[int]]:
    return [encode_line(bundle.source_vocab, line) for line in lines]


def render(bundle: ModelBundle, results: Sequence[DecodeResult]) -> List[str]:
    return [decode_line(bundle.target_vocab, result.tokens) for result in results]


def empty_scores(bundle: ModelBundle, sources: Sequence[Sequence[int]]) -> List[float]:
    """Score of the empty translation <EOS> for every source."""
    return [force_score(bundle.ckpt, bundle.head, source, [EOS_ID]) for source in sources]


def train_and_save(config: ExperimentConfig, spec: LossSpec, out_dir: Union[str, Path]) -> Tuple[TrainResult, Path]:
    """Build vocabularies, train one model and write checkpoints, vocabularies and the log."""
    out_dir = Path(out_dir)
    train_source, train_target = config.data.split_paths("train")
    dev_source, dev_target = config.data.split_paths("dev")
    config.require_paths(train_source, train_target, dev_source, dev_target)

    train_text = load_parallel(train_source, train_target)
    dev_text = load_parallel(dev_source, dev_target)[: config.data.dev_eval_sentences]
    source_vocab = build_vocab((src for src, _ in train_text), config.data.max_vocab_size)
    target_vocab = build_vocab((tgt for _, tgt in train_text), config.data.max_vocab_size)

    max_len = config.data.max_len
    if max_len + 1 > config.model.max_positions:
        raise ConfigError(
            f"data.max_len ({max_len}) needs max_positions >= {max_len + 1}, got {config.model.max_positions}"
        )
    model_config = config.model.model_copy(
        update={
            "source_vocab_size": len(source_vocab),
            "target_vocab_size": len(target_vocab),
            "seed": config.run.seed,
        }
    )
    initial = init_params(model_config)
    initial.metadata = {"source_vocab": SOURCE_VOCAB_FILE, "target_vocab": TARGET_VOCAB_FILE}

    def log_row(row):
        write_csv(out_dir / "train_log.csv", result_rows + [row], "train_log", comment=f"{spec.describe()} optimizer=adam")
        result_rows.append(row)

    result_rows: List[dict] = []
    result = train(
        initial,
        spec,
        config.optimizer,
        encode_parallel(train_text, source_vocab, target_vocab),
        encode_parallel(dev_text, source_vocab, target_vocab),
        target_vocab,
        seed=config.run.seed,
        max_len=max_len,
        record_timings=config.run.record_timings,
        on_evaluation=log_row,
    )

    save_vocab(source_vocab, out_dir / SOURCE_VOCAB_FILE)
    save_vocab(target_vocab, out_dir / TARGET_VOCAB_FILE)
    save_checkpoint(result.best, out_dir / "best.ckpt")
    save_checkpoint(result.last, out_dir / "last.ckpt")
    logger.info(f"Best dev greedy BLEU {result.best_dev_bleu:.2f} at step {result.best.step} ({spec.describe()}).")
    return result, out_dir / "best.ckpt"
