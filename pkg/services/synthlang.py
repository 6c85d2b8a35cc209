"""
IBM Model 3 sampler for synthetic parallel corpora.

Source words are numbered 1..F, row 0 of the fertility and translation
tables belongs to the NULL word. Target words are numbered 0..E-1. The
text forms are `s<k>` and `t<e+1>`.

Distortion d(j | i, l, m) is stored over absolute target positions
j = 1..64, one row per (i, l, m) bucket. A draw only sees the positions
j <= m that are still vacant, renormalized. When a row has no mass left
there, the word takes the vacant position nearest to its diagonal.
"""

import configparser
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from utils.errors import DataError, DomainError
from utils.logger import logger

MAX_FERTILITY = 4
BUCKET_WIDTH = 4
MAX_TARGET_LENGTH = 64
NUM_BUCKETS = MAX_TARGET_LENGTH // BUCKET_WIDTH
DISTORTION_SPREAD = 2.0  # target positions
MAX_RETRIES = 10
ROW_TOLERANCE = 1e-9
DISTORTION_SHAPE = (NUM_BUCKETS,) * 3 + (MAX_TARGET_LENGTH,)


def bucket(position: int) -> int:
    """Bucket of a 1-based position or length."""
    return min((position - 1) // BUCKET_WIDTH, NUM_BUCKETS - 1)


@dataclass(frozen=True, eq=False)
class Ibm3Params:
    fertility: np.ndarray  # [F+1, max_fertility+1]
    translation: np.ndarray  # [F+1, E]
    distortion: np.ndarray  # [NUM_BUCKETS]*3 + [MAX_TARGET_LENGTH]
    p1: float

    def __post_init__(self):
        if self.fertility.ndim != 2 or self.fertility.shape[1] < 2:
            raise DataError("fertility table must be [F+1, max_fertility+1] with max_fertility >= 1")
        if self.translation.ndim != 2 or self.translation.shape[0] != self.fertility.shape[0]:
            raise DataError("translation table must have one row per fertility row")
        if self.distortion.shape != DISTORTION_SHAPE:
            raise DataError(f"distortion table must be {DISTORTION_SHAPE}")
        if not 0.0 <= self.p1 <= 0.5:
            raise DataError(f"p1 must lie in [0, 0.5], got {self.p1}")
        for name in ("fertility", "translation", "distortion"):
            check_rows(getattr(self, name), name)
        object.__setattr__(self, "_by_temperature", {})

    @property
    def num_source(self) -> int:
        return self.fertility.shape[0] - 1

    @property
    def num_target(self) -> int:
        return self.translation.shape[1]

    @property
    def max_fertility(self) -> int:
        return self.fertility.shape[1] - 1

    def adjusted(self, gamma: float) -> "Ibm3Params":
        """Copy with temperature applied to n, t and d; p1 is left untouched."""
        gamma = float(gamma)
        if gamma == 1.0:
            return self
        if gamma not in self._by_temperature:
            self._by_temperature[gamma] = Ibm3Params(
                fertility=temperature_adjust(self.fertility, gamma),
                translation=temperature_adjust(self.translation, gamma),
                distortion=temperature_adjust(self.distortion, gamma),
                p1=self.p1,
            )
        return self._by_temperature[gamma]


def check_rows(table: np.ndarray, name: str) -> None:
    if np.any(table < 0) or not np.all(np.isfinite(table)):
        raise DataError(f"{name} table has negative or non-finite entries")
    sums = table.sum(axis=-1)
    worst = float(np.max(np.abs(sums - 1.0)))
    if worst > ROW_TOLERANCE:
        raise DataError(f"{name} table has a row summing to {float(sums.flat[np.argmax(np.abs(sums - 1.0))])!r}")


def temperature_adjust(dist, gamma: float) -> np.ndarray:
    """P_gamma(c) proportional to exp(log P(c) / gamma), along the last axis."""
    if not gamma > 0:
        raise DomainError(f"temperature must be positive, got {gamma}")
    dist = np.asarray(dist, dtype=np.float64)
    if gamma == 1.0:
        return dist.copy()
    with np.errstate(divide="ignore"):
        scaled = np.log(dist) / gamma
    top = np.max(scaled, axis=-1, keepdims=True)
    adjusted = np.exp(scaled - top)
    return adjusted / adjusted.sum(axis=-1, keepdims=True)


def _draw(row: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(row)
    index = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(index, len(row) - 1)


def diagonal_position(i: int, l: int, m: int) -> int:
    """1-based target position a source word at position i lands on with zero distortion."""
    return int(math.floor((i - 0.5) * m / l)) + 1


@dataclass
class Ibm3Sample:
    target: List[int]
    fertilities: List[int]  # phi_0 first, then one per source word
    alignment: List[int]  # source position (0 = NULL) of every target position
    empty: bool = False

    @property
    def length(self) -> int:
        return len(self.target)


def _place(row: np.ndarray, center: int, m: int, vacant: np.ndarray, rng: np.random.Generator) -> int:
    """1-based target position drawn from a distortion row restricted to vacant j <= m."""
    weights = np.where(vacant[:m], row[:m], 0.0)
    if weights.sum() > 0:
        return _draw(weights, rng) + 1
    # no mass on a vacant position: nearest vacant position to the diagonal
    free = np.flatnonzero(vacant[:m]) + 1
    return int(free[np.argmin(np.abs(free - center))])


def sample_alignment(
    params: Ibm3Params, source_ids: Sequence[int], gamma: float, rng: np.random.Generator
) -> Ibm3Sample:
    """Run the Model 3 generative story once and keep the latent alignment."""
    source = [int(f) for f in source_ids]
    if not source:
        raise DataError("cannot translate an empty source sentence")
    if min(source) < 1 or max(source) > params.num_source:
        raise DataError(f"source ids must lie in [1, {params.num_source}]")
    table = params.adjusted(gamma)
    l = len(source)

    for _ in range(MAX_RETRIES):
        phis = [_draw(table.fertility[f], rng) for f in source]
        phi0 = int(rng.binomial(sum(phis), params.p1)) if sum(phis) else 0
        m = sum(phis) + phi0
        if 0 < m <= MAX_TARGET_LENGTH:
            break
    else:
        if m > MAX_TARGET_LENGTH:
            raise DataError(f"sampled target length {m} exceeds the distortion support of {MAX_TARGET_LENGTH}")
        logger.debug(f"Every fertility draw was empty for a source of length {l}; emitting an empty sentence.")
        return Ibm3Sample(target=[], fertilities=[0] * (l + 1), alignment=[], empty=True)

    target = np.full(m, -1, dtype=np.int64)
    alignment = np.zeros(m, dtype=np.int64)
    vacant = np.ones(m, dtype=bool)
    distortion = table.distortion[:, bucket(l), bucket(m)]
    for i, (f, phi) in enumerate(zip(source, phis), start=1):
        center = diagonal_position(i, l, m)
        row = distortion[bucket(i)]
        for _ in range(phi):
            word = _draw(table.translation[f], rng)
            j = _place(row, center, m, vacant, rng)
            target[j - 1] = word
            alignment[j - 1] = i
            vacant[j - 1] = False

    spurious = [_draw(table.translation[0], rng) for _ in range(phi0)]
    slots = np.flatnonzero(vacant)
    for slot, word in zip(rng.permutation(slots), spurious):
        target[slot] = word

    return Ibm3Sample(target=target.tolist(), fertilities=[phi0] + phis, alignment=alignment.tolist())


def sample_translation(
    params: Ibm3Params, source_ids: Sequence[int], gamma: float, rng: np.random.Generator
) -> List[int]:
    return sample_alignment(params, source_ids, gamma, rng).target


def sample_corpus(
    params: Ibm3Params, sources: Sequence[Sequence[int]], gamma: float, seed: int, threads: int = 1
) -> List[List[int]]:
    """One sampled target per source line, each line seeded by (seed, line index)."""

    def sample_line(index: int) -> Ibm3Sample:
        return sample_alignment(params, sources[index], gamma, np.random.default_rng([seed, index]))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(sample_line, range(len(sources))))
    else:
        samples = [sample_line(index) for index in range(len(sources))]

    empty = sum(sample.empty for sample in samples)
    if empty:
        logger.warning(f"{empty} of {len(samples)} sampled sentences are empty after {MAX_RETRIES} retries.")
    return [sample.target for sample in samples]


def _dirichlet_rows(rng: np.random.Generator, shape: Tuple[int, ...], concentration) -> np.ndarray:
    """Dirichlet rows along the last axis; zero concentration keeps an entry at exactly zero."""
    alpha = np.broadcast_to(np.asarray(concentration, dtype=np.float64), shape)
    draws = np.where(alpha > 0, rng.standard_gamma(np.where(alpha > 0, alpha, 1.0)), 0.0)
    # tiny concentrations can underflow a whole row: fall back to the prior mean
    dead = draws.sum(axis=-1) == 0
    if np.any(dead):
        draws[dead] = alpha[dead]
    return draws / draws.sum(axis=-1, keepdims=True)


def _bucket_middle(index: int) -> float:
    return index * BUCKET_WIDTH + (BUCKET_WIDTH + 1) / 2


def distortion_prior(concentration: float, spread: float = DISTORTION_SPREAD) -> np.ndarray:
    """Dirichlet parameters over j per (i, l, m) bucket.

    Mass decays as exp(-|j - diagonal| / spread) around the diagonal of the
    bucket middles and is zero past the longest m of the bucket.
    """
    middles = np.array([_bucket_middle(b) for b in range(NUM_BUCKETS)])
    i, l, m = np.meshgrid(middles, middles, middles, indexing="ij")
    diagonal = (i - 0.5) * m / l + 0.5
    positions = np.arange(1, MAX_TARGET_LENGTH + 1)
    alpha = concentration * np.exp(-np.abs(positions - diagonal[..., None]) / spread)
    longest = (np.arange(NUM_BUCKETS) + 1) * BUCKET_WIDTH
    alpha[:, :, positions[None, :] > longest[:, None]] = 0.0
    return alpha


def make_random_params(
    num_source: int,
    num_target: int,
    seed: int,
    concentration: float,
    max_fertility: int = MAX_FERTILITY,
    p1: float = 0.1,
    spread: float = DISTORTION_SPREAD,
) -> Ibm3Params:
    """Fertility and translation rows from a symmetric Dirichlet, distortion rows from a diagonal-peaked one.

    Small concentrations give peaked rows; a wider spread allows longer jumps.
    """
    if not concentration > 0 or not spread > 0:
        raise DataError(f"concentration and spread must be positive, got {concentration} and {spread}")
    if num_source < 1 or num_target < 1 or max_fertility < 1:
        raise DataError("table sizes must be positive")
    rng = np.random.default_rng(seed)
    fertility = _dirichlet_rows(rng, (num_source + 1, max_fertility + 1), concentration)
    fertility[0] = np.eye(max_fertility + 1)[0]  # NULL fertility comes from p1
    translation = _dirichlet_rows(rng, (num_source + 1, num_target), concentration)
    distortion = _dirichlet_rows(rng, DISTORTION_SHAPE, distortion_prior(concentration, spread))
    return Ibm3Params(fertility, translation, distortion, float(p1))


def identity_params(num_words: int, p1: float = 0.0) -> Ibm3Params:
    """Point-mass tables: fertility 1, s<k> -> t<k>, monotone distortion.

    Every distortion row points at the first position of its source bucket;
    the other words of the bucket fall through to their diagonal.
    """
    fertility = np.zeros((num_words + 1, MAX_FERTILITY + 1))
    fertility[1:, 1] = 1.0
    fertility[0, 0] = 1.0
    translation = np.zeros((num_words + 1, num_words))
    translation[0, 0] = 1.0
    translation[np.arange(1, num_words + 1), np.arange(num_words)] = 1.0
    distortion = np.zeros(DISTORTION_SHAPE)
    for i in range(NUM_BUCKETS):
        distortion[i, ..., i * BUCKET_WIDTH] = 1.0
    return Ibm3Params(fertility, translation, distortion, float(p1))


def _format_row(values: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in values)


def save_params(params: Ibm3Params, path: Union[str, Path]) -> None:
    """Write the tables as an INI-style text file; floats use their shortest round-trip form."""
    parser = configparser.ConfigParser()
    parser["shape"] = {
        "num_source": str(params.num_source),
        "num_target": str(params.num_target),
        "max_fertility": str(params.max_fertility),
        "bucket_width": str(BUCKET_WIDTH),
        "max_target_length": str(MAX_TARGET_LENGTH),
    }
    parser["p1"] = {"p1": repr(float(params.p1))}
    parser["fertility"] = {str(f): _format_row(row) for f, row in enumerate(params.fertility)}
    parser["translation"] = {str(f): _format_row(row) for f, row in enumerate(params.translation)}
    parser["distortion"] = {
        f"{i},{l},{m}": _format_row(params.distortion[i, l, m]) for i, l, m in np.ndindex(params.distortion.shape[:3])
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# IBM Model 3 parameters; row 0 of fertility/translation is the NULL word\n")
        parser.write(f)


def _parse_rows(section, count: int, width: int, name: str) -> np.ndarray:
    table = np.zeros((count, width))
    seen = set()
    for key, value in section.items():
        try:
            row = int(key)
            numbers = [float(v) for v in value.split()]
        except ValueError:
            raise DataError(f"malformed {name} row '{key}'")
        if not 0 <= row < count or len(numbers) != width:
            raise DataError(f"{name} row '{key}' has the wrong index or width")
        table[row] = numbers
        seen.add(row)
    if len(seen) != count:
        raise DataError(f"{name} table is missing rows")
    return table


def load_params(path: Union[str, Path]) -> Ibm3Params:
    path = Path(path)
    if not path.exists():
        raise DataError(f"parameter file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
        shape = parser["shape"]
        num_source = shape.getint("num_source")
        num_target = shape.getint("num_target")
        max_fertility = shape.getint("max_fertility")
        p1 = parser["p1"].getfloat("p1")
    except (configparser.Error, KeyError, ValueError, TypeError) as error:
        raise DataError(f"malformed parameter file {path}: {error}")
    if shape.getint("bucket_width", BUCKET_WIDTH) != BUCKET_WIDTH or shape.getint(
        "max_target_length", MAX_TARGET_LENGTH
    ) != MAX_TARGET_LENGTH:
        raise DataError(f"{path} uses a different distortion bucketing")

    for name in ("fertility", "translation", "distortion"):
        if name not in parser:
            raise DataError(f"parameter file {path} has no [{name}] section")
    fertility = _parse_rows(parser["fertility"], num_source + 1, max_fertility + 1, "fertility")
    translation = _parse_rows(parser["translation"], num_source + 1, num_target, "translation")

    distortion = np.zeros(DISTORTION_SHAPE)
    filled = 0
    for key, value in parser["distortion"].items():
        try:
            index = tuple(int(part) for part in key.split(","))
            numbers = [float(v) for v in value.split()]
            distortion[index] = numbers
        except (ValueError, IndexError):
            raise DataError(f"malformed distortion row '{key}'")
        filled += 1
    if filled != NUM_BUCKETS**3:
        raise DataError("distortion table is missing rows")
    return Ibm3Params(fertility, translation, distortion, p1)


def expected_length_ratio(params: Ibm3Params, sources: Sequence[Sequence[int]], gamma: float = 1.0) -> float:
    """Predicted total target length over total source length: sum of E[phi] * (1 + p1) / |x|."""
    table = params.adjusted(gamma)
    mean_fertility = table.fertility @ np.arange(params.max_fertility + 1)
    source_tokens = sum(len(source) for source in sources)
    if source_tokens == 0:
        raise DataError("cannot predict a length ratio for an empty corpus")
    expected = sum(float(mean_fertility[list(source)].sum()) for source in sources)
    return expected * (1.0 + params.p1) / source_tokens


def conditional_entropy(pairs: Sequence[Tuple[Sequence, Sequence]]) -> float:
    """Plug-in H(target word | source word) in bits from sentence-level co-occurrence counts."""
    rows = [(s, t) for source, target in pairs for s in set(source) for t in target]
    if not rows:
        raise DataError("cannot estimate entropy from an empty corpus")
    counts = pd.DataFrame(rows, columns=["source", "target"]).value_counts().rename("count").reset_index()
    source_totals = counts.groupby("source")["count"].transform("sum")
    joint = counts["count"] / counts["count"].sum()
    conditional = counts["count"] / source_totals
    return float(-(joint * np.log2(conditional)).sum())


def generate_sources(
    num_sentences: int,
    vocab_size: int,
    min_len: int,
    max_len: int,
    seed: int,
    zipf_exponent: float = 1.0,
) -> List[List[int]]:
    """Source sentences of ids 1..vocab_size drawn from a Zipfian unigram distribution."""
    if vocab_size < 1 or not 1 <= min_len <= max_len:
        raise DataError("source generator needs vocab_size >= 1 and 1 <= min_len <= max_len")
    rng = np.random.default_rng(seed)
    weights = 1.0 / np.arange(1, vocab_size + 1) ** zipf_exponent
    weights /= weights.sum()
    lengths = rng.integers(min_len, max_len + 1, size=num_sentences)
    return [(rng.choice(vocab_size, size=int(n), p=weights) + 1).tolist() for n in lengths]


def source_text(ids: Sequence[int]) -> str:
    return " ".join(f"s{k}" for k in ids)


def target_text(ids: Sequence[int]) -> str:
    return " ".join(f"t{e + 1}" for e in ids)


@dataclass
class SourceLexicon:
    """Maps arbitrary source tokens to table rows 1..F by frequency rank."""

    words: List[str]
    index: Dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index = {word: k for k, word in enumerate(self.words, start=1)}

    def encode(self, line: str) -> List[int]:
        try:
            return [self.index[word] for word in line.split()]
        except KeyError as error:
            raise DataError(f"source word {error} is not covered by the parameter tables")
