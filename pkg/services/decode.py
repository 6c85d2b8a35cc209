"""
Greedy, beam and exact decoding for either output head.

All decoders score a hypothesis by the sum of per-step log scores (log
sigmoid for SCONES, log softmax for the baseline). Every per-step score is
<= 0, so appending a token never increases a hypothesis score. This is what
makes the pruning in exact search admissible.

Ties are always broken towards the lowest token id. PAD and BOS are never
generated.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Sequence, Tuple

import numpy as np

from config.app import BOS_ID, DEFAULT_MAX_STATES, EOS_ID, EXACT_SEED_BEAM_SIZE, PAD_ID
from services.losses import Head, prefix_logprob, sequence_logprob, step_logprobs
from services.model import Checkpoint, DecoderCache, bind_params, decode_step
from utils.errors import DataError
from utils.logger import logger

BLOCKED_IDS = (PAD_ID, BOS_ID)

Exactness = Literal["exact", "approximate", "none"]


@dataclass(frozen=True, eq=False)
class Hypothesis:
    """BOS-led token prefix with its cumulative log score."""

    tokens: Tuple[int, ...]
    score: float
    cache: Optional[DecoderCache] = field(default=None, repr=False)

    @property
    def finished(self) -> bool:
        return len(self.tokens) > 1 and self.tokens[-1] == EOS_ID

    @property
    def sort_key(self):
        return (-self.score, self.tokens)

    @property
    def final_sort_key(self):
        # prefixes cut off at max_len can no longer finish
        return (not self.finished, -self.score, self.tokens)


@dataclass
class DecodeResult:
    tokens: List[int]  # generated tokens, no BOS; ends with EOS when finished
    score: float
    exactness: Exactness = "none"
    states_explored: int = 0
    wall_time: float = 0.0

    @property
    def finished(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS_ID

    @property
    def is_exact(self) -> bool:
        return self.exactness == "exact"


def default_max_len(ckpt: Checkpoint, source_ids: Sequence[int]) -> int:
    return min(2 * len(source_ids) + 10, ckpt.config.max_positions)


def _resolve_max_len(ckpt: Checkpoint, source_ids: Sequence[int], max_len: Optional[int]) -> int:
    if max_len is None:
        return default_max_len(ckpt, source_ids)
    if max_len < 1:
        raise DataError("max_len must be at least 1")
    return min(max_len, ckpt.config.max_positions)


def _masked_logprobs(head: Head, logits: np.ndarray) -> np.ndarray:
    logprobs = step_logprobs(head, logits).copy()
    logprobs[list(BLOCKED_IDS)] = -np.inf
    return logprobs


def _final_score(head: Head, ckpt: Checkpoint, source_ids, tokens: Sequence[int]) -> float:
    if tokens and tokens[-1] == EOS_ID:
        return sequence_logprob(head, ckpt, source_ids, tokens)
    return prefix_logprob(head, ckpt, source_ids, tokens)


def greedy_decode(ckpt: Checkpoint, head: Head, source_ids: Sequence[int], max_len: Optional[int] = None) -> DecodeResult:
    """Pick the argmax of the raw logits at every step.

    Sigmoid and softmax both preserve the ranking of logits, so the head's
    activation is never evaluated during the search itself.
    """
    start = time.perf_counter()
    max_len = _resolve_max_len(ckpt, source_ids, max_len)
    params = bind_params(ckpt)
    prefix = [BOS_ID]
    cache = None
    states = 0
    while len(prefix) - 1 < max_len:
        logits, cache = decode_step(ckpt, source_ids, prefix, cache, params)
        states += 1
        logits = logits.copy()
        logits[list(BLOCKED_IDS)] = -np.inf
        token = int(np.argmax(logits))
        prefix.append(token)
        if token == EOS_ID:
            break
    tokens = prefix[1:]
    return DecodeResult(
        tokens=tokens,
        score=_final_score(head, ckpt, source_ids, tokens),
        states_explored=states,
        wall_time=time.perf_counter() - start,
    )


def beam_decode(
    ckpt: Checkpoint, head: Head, source_ids: Sequence[int], beam_size: int, max_len: Optional[int] = None
) -> List[DecodeResult]:
    """Vanilla beam search without length normalization.

    Finished hypotheses stay in the beam and compete with the expansions of
    unfinished ones on raw cumulative score. The search stops once all
    survivors are finished or max_len tokens have been generated. On the
    last step finished hypotheses rank ahead of the truncated prefixes, so an
    unfinished result comes first only when nothing in the beam finished.
    """
    if beam_size < 1:
        raise DataError("beam_size must be at least 1")
    start = time.perf_counter()
    max_len = _resolve_max_len(ckpt, source_ids, max_len)
    params = bind_params(ckpt)
    beam = [Hypothesis((BOS_ID,), 0.0)]
    states = 0

    for step in range(max_len):
        if all(hyp.finished for hyp in beam):
            break
        last = step == max_len - 1
        pool = [hyp for hyp in beam if hyp.finished]
        for hyp in beam:
            if hyp.finished:
                continue
            logits, cache = decode_step(ckpt, source_ids, hyp.tokens, hyp.cache, params)
            states += 1
            logprobs = _masked_logprobs(head, logits)
            for token in np.argsort(-logprobs, kind="stable")[:beam_size]:
                if np.isneginf(logprobs[token]):
                    break
                pool.append(Hypothesis(hyp.tokens + (int(token),), hyp.score + float(logprobs[token]), cache))
        beam = sorted(pool, key=lambda hyp: hyp.final_sort_key if last else hyp.sort_key)[:beam_size]

    elapsed = time.perf_counter() - start
    return [
        DecodeResult(tokens=list(hyp.tokens[1:]), score=hyp.score, states_explored=states, wall_time=elapsed)
        for hyp in beam
    ]


def exact_decode(
    ckpt: Checkpoint,
    head: Head,
    source_ids: Sequence[int],
    max_len: Optional[int] = None,
    max_states: int = DEFAULT_MAX_STATES,
    seed_bound: Optional[DecodeResult] = None,
) -> DecodeResult:
    """Depth-first search for the highest scoring EOS-terminated sequence of length <= max_len.

    A prefix is pruned as soon as its score drops to or below the best
    finished score found so far. The bound starts from `seed_bound`, by
    default the best beam-4 hypothesis. Children are visited in descending
    score order. When `max_states` decoder steps have been spent the search
    stops and returns the best finished sequence seen so far, flagged
    "approximate". That is the seed, or a sequence that beat it before the
    cap, with no optimality guarantee. Otherwise the result is flagged "exact".
    """
    if max_states < 1:
        raise DataError("max_states must be at least 1")
    start = time.perf_counter()
    max_len = _resolve_max_len(ckpt, source_ids, max_len)
    params = bind_params(ckpt)

    if seed_bound is None:
        seed_bound = beam_decode(ckpt, head, source_ids, EXACT_SEED_BEAM_SIZE, max_len)[0]
    best_tokens: Optional[List[int]] = None
    best_score = -np.inf
    if seed_bound.finished and len(seed_bound.tokens) <= max_len:
        best_tokens, best_score = list(seed_bound.tokens), float(seed_bound.score)

    states = 0
    capped = False

    def search(prefix: List[int], score: float, cache: Optional[DecoderCache]) -> None:
        nonlocal best_tokens, best_score, states, capped
        if states >= max_states:
            capped = True
            return
        logits, cache = decode_step(ckpt, source_ids, [BOS_ID] + prefix, cache, params)
        states += 1
        logprobs = _masked_logprobs(head, logits)
        for token in np.argsort(-logprobs, kind="stable"):
            child_score = score + float(logprobs[token])
            if child_score <= best_score:
                break
            if token == EOS_ID:
                best_tokens, best_score = prefix + [EOS_ID], child_score
                continue
            # room for this token and a closing EOS
            if len(prefix) + 2 > max_len:
                continue
            search(prefix + [int(token)], child_score, cache)
            if capped:
                return

    search([], 0.0, None)

    if best_tokens is None:
        best_tokens = []
    result = DecodeResult(
        tokens=best_tokens,
        score=best_score,
        exactness="approximate" if capped else "exact",
        states_explored=states,
        wall_time=time.perf_counter() - start,
    )
    logger.debug(f"Exact search explored {states} states ({result.exactness}).")
    return result


def enumerate_decode(
    ckpt: Checkpoint, head: Head, source_ids: Sequence[int], max_len: Optional[int] = None
) -> DecodeResult:
    """Brute-force argmax over every EOS-terminated sequence of length <= max_len.

    Exponential in max_len; only meant as a referee for tiny vocabularies.
    """
    start = time.perf_counter()
    max_len = _resolve_max_len(ckpt, source_ids, max_len)
    params = bind_params(ckpt)
    best: List = [None, -np.inf]
    states = 0

    def visit(prefix: List[int], score: float, cache) -> None:
        nonlocal states
        logits, cache = decode_step(ckpt, source_ids, [BOS_ID] + prefix, cache, params)
        states += 1
        logprobs = _masked_logprobs(head, logits)
        for token in range(len(logprobs)):
            if np.isneginf(logprobs[token]):
                continue
            child_score = score + float(logprobs[token])
            if token == EOS_ID:
                if child_score > best[1]:
                    best[0], best[1] = prefix + [EOS_ID], child_score
            elif len(prefix) + 2 <= max_len:
                visit(prefix + [token], child_score, cache)

    visit([], 0.0, None)
    return DecodeResult(
        tokens=best[0] or [],
        score=best[1],
        exactness="exact",
        states_explored=states,
        wall_time=time.perf_counter() - start,
    )


def force_score(ckpt: Checkpoint, head: Head, source_ids: Sequence[int], target_ids: Sequence[int]) -> float:
    """Score a given EOS-terminated target; the empty translation is [EOS]."""
    return sequence_logprob(head, ckpt, source_ids, target_ids)


@dataclass(frozen=True)
class SearchErrorSummary:
    errors: int
    compared: int
    excluded: int

    @property
    def rate(self) -> float:
        return self.errors / self.compared if self.compared else float("nan")


def count_search_errors(beam_results: Sequence[DecodeResult], exact_results: Sequence[DecodeResult]) -> SearchErrorSummary:
    """Count sentences where beam search missed the mode.

    Exact results that hit the state cap are excluded and counted separately.
    """
    if len(beam_results) != len(exact_results):
        raise DataError(f"cannot compare {len(beam_results)} beam results with {len(exact_results)} exact results")
    errors = compared = excluded = 0
    for beam, exact in zip(beam_results, exact_results):
        if not exact.is_exact:
            excluded += 1
            continue
        compared += 1
        if list(beam.tokens) != list(exact.tokens):
            errors += 1
    return SearchErrorSummary(errors, compared, excluded)


def search_error_rate(beam_results: Sequence[DecodeResult], exact_results: Sequence[DecodeResult]) -> float:
    return count_search_errors(beam_results, exact_results).rate


def finished_mean_score(results: Sequence[DecodeResult]) -> float:
    """Mean score of the EOS-terminated results; NaN when none finished."""
    scores = [result.score for result in results if result.finished]
    return float(np.mean(scores)) if scores else float("nan")


def decode_many(
    decoder: Callable[[Sequence[int]], DecodeResult], sources: Sequence[Sequence[int]], threads: int = 1
) -> List[DecodeResult]:
    """Decode sentences independently, optionally on a thread pool; output order follows input order."""
    if threads <= 1:
        return [decoder(source) for source in sources]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(decoder, sources))
