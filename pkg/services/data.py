"""Vocabulary, corpus I/O, batching and padding with the reserved-id convention."""

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from config.app import BOS_ID, EOS_ID, PAD_ID, RESERVED_TOKENS, UNK_ID
from utils.errors import DataError
from utils.logger import logger

PathLike = Union[str, Path]
IdPair = Tuple[List[int], List[int]]

MAX_LENGTH_RATIO = 3.0


@dataclass(frozen=True)
class Vocab:
    """Dense token inventory; ids 0-3 are PAD, EOS, BOS and UNK."""

    tokens: Tuple[str, ...]

    def __post_init__(self):
        if tuple(self.tokens[: len(RESERVED_TOKENS)]) != tuple(RESERVED_TOKENS):
            raise DataError(f"vocabulary must start with the reserved tokens {RESERVED_TOKENS}")
        if len(set(self.tokens)) != len(self.tokens):
            raise DataError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "_index", {token: i for i, token in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    @property
    def index(self) -> Dict[str, int]:
        return dict(self._index)


def build_vocab(corpus: Iterable[str], max_size: int) -> Vocab:
    """Frequency-ranked whitespace tokens after the reserved ids, ties broken lexicographically."""
    if max_size < len(RESERVED_TOKENS):
        raise DataError(f"max_size must be at least {len(RESERVED_TOKENS)}")
    counts = Counter()
    lines = 0
    for line in corpus:
        counts.update(line.split())
        lines += 1
    if lines == 0 or not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    for reserved in RESERVED_TOKENS:
        counts.pop(reserved, None)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    room = max_size - len(RESERVED_TOKENS)
    return Vocab(tuple(RESERVED_TOKENS) + tuple(token for token, _ in ranked[:room]))


def encode_line(vocab: Vocab, text: str) -> List[int]:
    return [vocab.id_of(token) for token in text.split()]


def decode_line(vocab: Vocab, ids: Sequence[int]) -> str:
    """Render ids as text, stopping at EOS and skipping every reserved id."""
    words = []
    for token_id in ids:
        token_id = int(token_id)
        if token_id == EOS_ID:
            break
        if token_id < len(RESERVED_TOKENS) or token_id >= len(vocab):
            continue
        words.append(vocab.tokens[token_id])
    return " ".join(words)


def save_vocab(vocab: Vocab, path: PathLike) -> None:
    write_lines(path, vocab.tokens)


def load_vocab(path: PathLike) -> Vocab:
    return Vocab(tuple(read_lines(path)))


def read_lines(path: PathLike) -> List[str]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def write_lines(path: PathLike, lines: Iterable[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(f"{line}\n")


def load_parallel(source_path: PathLike, target_path: PathLike) -> List[Tuple[str, str]]:
    sources = read_lines(source_path)
    targets = read_lines(target_path)
    if len(sources) != len(targets):
        raise DataError(
            f"parallel corpus is misaligned: {len(sources)} source lines vs {len(targets)} target lines"
        )
    return list(zip(sources, targets))


def encode_parallel(pairs: Sequence[Tuple[str, str]], source_vocab: Vocab, target_vocab: Vocab) -> List[IdPair]:
    return [(encode_line(source_vocab, src), encode_line(target_vocab, tgt)) for src, tgt in pairs]


@dataclass(frozen=True)
class Batch:
    source: np.ndarray  # [B,S] right-padded with PAD
    target_in: np.ndarray  # [B,T] BOS-led
    target_out: np.ndarray  # [B,T] EOS-terminated
    weights: np.ndarray  # [B,T] 1.0 where target_out != PAD

    @property
    def num_tokens(self) -> int:
        return int(self.weights.sum())


def make_batch(pairs: Sequence[IdPair]) -> Batch:
    if not pairs:
        raise DataError("cannot build an empty batch")
    src_len = max(len(src) for src, _ in pairs)
    tgt_len = max(len(tgt) for _, tgt in pairs) + 1
    source = np.full((len(pairs), src_len), PAD_ID, dtype=np.int64)
    target_in = np.full((len(pairs), tgt_len), PAD_ID, dtype=np.int64)
    target_out = np.full((len(pairs), tgt_len), PAD_ID, dtype=np.int64)
    for row, (src, tgt) in enumerate(pairs):
        source[row, : len(src)] = src
        target_in[row, : len(tgt) + 1] = [BOS_ID] + list(tgt)
        target_out[row, : len(tgt) + 1] = list(tgt) + [EOS_ID]
    weights = (target_out != PAD_ID).astype(np.float64)
    return Batch(source, target_in, target_out, weights)


def keep_pair(src: Sequence[int], tgt: Sequence[int], max_len: int) -> bool:
    if not src or not tgt or len(src) > max_len or len(tgt) > max_len:
        return False
    longer, shorter = max(len(src), len(tgt)), max(min(len(src), len(tgt)), 1)
    return longer / shorter <= MAX_LENGTH_RATIO


class BatchStream:
    """Length-filtered, seeded batch iterator over a parallel id corpus.

    Pairs with a side longer than `max_len`, an empty side or a length ratio
    above 3 are dropped up front and counted in `dropped`. With `num_epochs`
    left as None the stream is endless; every epoch reshuffles with a seed
    derived from (seed, epoch).
    """

    def __init__(
        self,
        pairs: Sequence[IdPair],
        batch_size: int,
        max_len: int,
        seed: int = 0,
        shuffle: bool = True,
        num_epochs: Optional[int] = None,
    ):
        if batch_size < 1:
            raise DataError("batch_size must be positive")
        self.pairs = [pair for pair in pairs if keep_pair(pair[0], pair[1], max_len)]
        self.dropped = len(pairs) - len(self.pairs)
        if not self.pairs:
            raise DataError(f"no sentence pairs survive length filtering (max_len={max_len})")
        if self.dropped:
            logger.info(f"Dropped {self.dropped} of {len(pairs)} sentence pairs by length filtering.")
        self.batch_size = batch_size
        self.seed = seed
        self.shuffle = shuffle
        self.num_epochs = num_epochs
        self.epoch = 0

    def __len__(self) -> int:
        return -(-len(self.pairs) // self.batch_size)

    def epoch_order(self, epoch: int) -> np.ndarray:
        if not self.shuffle:
            return np.arange(len(self.pairs))
        return np.random.default_rng([self.seed, epoch]).permutation(len(self.pairs))

    def __iter__(self) -> Iterator[Batch]:
        epoch = 0
        while self.num_epochs is None or epoch < self.num_epochs:
            self.epoch = epoch
            order = self.epoch_order(epoch)
            for start in range(0, len(order), self.batch_size):
                yield make_batch([self.pairs[i] for i in order[start : start + self.batch_size]])
            epoch += 1


def batch_iter(
    pairs: Sequence[IdPair],
    batch_size: int,
    max_len: int,
    seed: int = 0,
    shuffle: bool = True,
    num_epochs: Optional[int] = None,
) -> BatchStream:
    return BatchStream(pairs, batch_size, max_len, seed=seed, shuffle=shuffle, num_epochs=num_epochs)
