"""
Corpus BLEU, length ratio, log-probability statistics and paired bootstrap.

BLEU is computed on whitespace tokens with clipped n-gram counts summed over
the corpus for n = 1..4 and no smoothing:

    BLEU = 100 * BP * exp(mean(log p_n)),  BP = 1 if c > r else exp(1 - r / c)

with BLEU = 0 as soon as one p_n is 0. Per-sentence sufficient statistics
are kept in a DataFrame so the bootstrap only re-sums rows.
"""

from collections import Counter
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config.app import BOOTSTRAP_RESAMPLES, SIGNIFICANCE_LEVELS
from utils.errors import DataError

MAX_ORDER = 4

STAT_COLUMNS = (
    [f"correct_{n}_grams" for n in range(1, MAX_ORDER + 1)]
    + [f"total_{n}_grams" for n in range(1, MAX_ORDER + 1)]
    + ["translation_length", "reference_length"]
)

Sentence = Union[str, Sequence[str]]


@dataclass(frozen=True)
class EvalReport:
    bleu: float
    precisions: Tuple[float, float, float, float]
    brevity_penalty: float
    length_ratio: float
    hyp_tokens: int
    ref_tokens: int

    def as_row(self) -> dict:
        row = {"bleu": self.bleu}
        row.update({f"p{n}": p for n, p in enumerate(self.precisions, start=1)})
        row.update(
            brevity_penalty=self.brevity_penalty,
            length_ratio=self.length_ratio,
            hyp_tokens=self.hyp_tokens,
            ref_tokens=self.ref_tokens,
        )
        return row


def _tokens(sentence: Sentence) -> List[str]:
    return sentence.split() if isinstance(sentence, str) else list(sentence)


def _ngrams(tokens: List[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check_aligned(hypotheses: Sequence, references: Sequence) -> None:
    if len(hypotheses) != len(references):
        raise DataError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not references:
        raise DataError("cannot evaluate an empty corpus")


def sufficient_stats(hypotheses: Sequence[Sentence], references: Sequence[Sentence]) -> pd.DataFrame:
    """One row of clipped n-gram matches, n-gram totals and lengths per sentence."""
    _check_aligned(hypotheses, references)
    rows = []
    for line, (hyp, ref) in enumerate(zip(hypotheses, references), start=1):
        hyp, ref = _tokens(hyp), _tokens(ref)
        if not ref:
            raise DataError(f"reference line {line} is empty")
        correct, total = [], []
        for n in range(1, MAX_ORDER + 1):
            hyp_ngrams = _ngrams(hyp, n)
            ref_ngrams = _ngrams(ref, n)
            correct.append(sum(min(count, ref_ngrams[gram]) for gram, count in hyp_ngrams.items()))
            total.append(max(len(hyp) - n + 1, 0))
        rows.append(correct + total + [len(hyp), len(ref)])
    return pd.DataFrame(rows, columns=STAT_COLUMNS)


def _bleu_from_sums(sums: np.ndarray) -> np.ndarray:
    """BLEU for each row of summed statistics laid out as STAT_COLUMNS."""
    sums = np.atleast_2d(np.asarray(sums, dtype=np.float64))
    correct = sums[:, :MAX_ORDER]
    total = sums[:, MAX_ORDER : 2 * MAX_ORDER]
    hyp_len = sums[:, -2]
    ref_len = sums[:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        precisions = np.where(total > 0, correct / np.maximum(total, 1), 0.0)
        positive = np.all(precisions > 0, axis=1)
        log_mean = np.where(positive[:, None], np.log(np.where(precisions > 0, precisions, 1.0)), 0.0).mean(axis=1)
        penalty = np.where(hyp_len > ref_len, 1.0, np.exp(1.0 - ref_len / np.maximum(hyp_len, 1e-300)))
    penalty = np.where(hyp_len == 0, 0.0, penalty)
    return np.where(positive, 100.0 * penalty * np.exp(log_mean), 0.0)


def report_from_stats(stats: pd.DataFrame) -> EvalReport:
    sums = stats.sum(axis=0).to_numpy(dtype=np.float64)
    correct, total = sums[:MAX_ORDER], sums[MAX_ORDER : 2 * MAX_ORDER]
    precisions = tuple(float(c / t) if t > 0 else 0.0 for c, t in zip(correct, total))
    hyp_len, ref_len = int(sums[-2]), int(sums[-1])
    if hyp_len == 0:
        penalty = 0.0
    elif hyp_len > ref_len:
        penalty = 1.0
    else:
        penalty = float(np.exp(1.0 - ref_len / hyp_len))
    return EvalReport(
        bleu=float(_bleu_from_sums(sums)[0]),
        precisions=precisions,
        brevity_penalty=penalty,
        length_ratio=hyp_len / ref_len,
        hyp_tokens=hyp_len,
        ref_tokens=ref_len,
    )


def corpus_bleu(hypotheses: Sequence[Sentence], references: Sequence[Sentence]) -> EvalReport:
    return report_from_stats(sufficient_stats(hypotheses, references))


def length_ratio(hypotheses: Sequence[Sentence], references: Sequence[Sentence]) -> float:
    """Total hypothesis tokens over total reference tokens."""
    if len(hypotheses) != len(references):
        raise DataError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    ref_tokens = sum(len(_tokens(ref)) for ref in references)
    if ref_tokens == 0:
        raise DataError("references contain no tokens")
    return sum(len(_tokens(hyp)) for hyp in hypotheses) / ref_tokens


def logprob_stats(scores: Sequence[float]) -> Tuple[float, float]:
    """Mean and population standard deviation."""
    if len(scores) == 0:
        raise DataError("no scores to summarize")
    values = np.asarray(scores, dtype=np.float64)
    return float(values.mean()), float(values.std(ddof=0))


def paired_bootstrap(
    hyps_a: Sequence[Sentence],
    hyps_b: Sequence[Sentence],
    references: Sequence[Sentence],
    n_resamples: int = BOOTSTRAP_RESAMPLES,
    seed: int = 0,
) -> Tuple[float, float]:
    """Paired bootstrap resampling of sentence indices.

    Returns (p_value, win_rate_a). The p-value is the fraction of resamples
    where BLEU(A) <= BLEU(B), so a system compared with itself gets 1.0. The
    win rate counts strict wins of A.
    """
    if len(hyps_a) != len(hyps_b):
        raise DataError(f"system A has {len(hyps_a)} lines but system B has {len(hyps_b)}")
    if n_resamples < 100:
        raise DataError("paired bootstrap needs at least 100 resamples")
    stats_a = sufficient_stats(hyps_a, references).to_numpy(dtype=np.float64)
    stats_b = sufficient_stats(hyps_b, references).to_numpy(dtype=np.float64)

    num_sentences = len(references)
    indices = np.random.default_rng(seed).integers(0, num_sentences, size=(n_resamples, num_sentences))
    # resample counts per sentence turn each resample into one weighted sum
    counts = np.zeros((n_resamples, num_sentences))
    np.add.at(counts, (np.arange(n_resamples)[:, None], indices), 1.0)
    bleu_a = _bleu_from_sums(counts @ stats_a)
    bleu_b = _bleu_from_sums(counts @ stats_b)
    return float(np.mean(bleu_a <= bleu_b)), float(np.mean(bleu_a > bleu_b))


def significance_mark(p_value: float) -> str:
    """Strongest mark whose threshold the p-value falls below, or ''."""
    for mark, level in sorted(SIGNIFICANCE_LEVELS.items(), key=lambda item: item[1]):
        if p_value < level:
            return mark
    return ""
