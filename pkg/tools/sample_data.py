from pathlib import Path
from typing import Dict, List, Optional

from pydantic import Field
from typing_extensions import Annotated

from services.data import build_vocab, read_lines, write_lines
from services.synthlang import (
    SourceLexicon,
    conditional_entropy,
    expected_length_ratio,
    generate_sources,
    load_params,
    make_random_params,
    sample_corpus,
    save_params,
    source_text,
    target_text,
)
from utils.csv_io import write_csv
from utils.errors import ConfigError, DataError
from utils.logger import logger
from utils.tools import doc_name, doc_tag

PARAMS_FILE = "ibm3_params.ini"
SPLITS = ("train", "dev", "test")


def _load_sources(data, seed: int) -> tuple:
    """Source id lists and their text, either read from `source_file` or generated."""
    total = data.train_sentences + data.dev_sentences + data.test_sentences
    if data.source_file is None:
        ids = generate_sources(total, data.source_words, data.min_length, data.max_length, seed=seed)
        return ids, [source_text(sentence) for sentence in ids], data.source_words

    lines = [line for line in read_lines(data.source_file) if line.strip()]
    if len(lines) < data.dev_sentences + data.test_sentences + 1:
        raise DataError(f"{data.source_file} has too few lines for the requested dev and test sets")
    words = list(build_vocab(lines, max_size=10**9).tokens[4:])
    lexicon = SourceLexicon(words)
    return [lexicon.encode(line) for line in lines], lines, len(words)


def _split_bounds(count: int, data) -> Dict[str, slice]:
    dev_start = count - data.dev_sentences - data.test_sentences
    test_start = count - data.test_sentences
    return {"train": slice(0, dev_start), "dev": slice(dev_start, test_start), "test": slice(test_start, count)}


@doc_tag("Data")
@doc_name("Sample data")
def cmd_sample_data(
    config,
    gammas: Annotated[
        Optional[List[float]], Field(description="Sampling temperatures; defaults to data.gammas.")
    ] = None,
    out_dir: Annotated[Optional[str], Field(description="Output directory; defaults to run.out_dir.")] = None,
) -> Dict:
    """
    Writes synthetic parallel corpora, one directory per sampling temperature

    Each `gamma_<g>/` directory holds train/dev/test `.src`/`.tgt` files. The
    IBM-3 tables are saved next to them, together with `sample_stats.csv`
    (length ratios and conditional target entropy per split). Samples that came
    out empty after every retry are dropped before splitting, so dev and test
    keep their requested sizes and train shrinks by the dropped count.

    Args:
    - gammas (List[float]): Temperatures overriding data.gammas.
    - out_dir (str): Output directory overriding run.out_dir.

    Returns:
        - dict: Status, written directories and artifact list.
    """
    data = config.data
    seed = config.run.seed
    gammas = list(gammas or data.gammas)
    if any(gamma <= 0 for gamma in gammas):
        raise ConfigError(f"sampling temperatures must be positive, got {gammas}")
    out = Path(out_dir or config.run.out_dir)

    source_ids, source_lines, num_source = _load_sources(data, seed)
    bounds = _split_bounds(len(source_ids), data)
    artifacts: List[str] = []
    rows = []
    corpora = {}

    if data.task == "copy":
        folder = out / "copy"
        for split in SPLITS:
            lines = source_lines[bounds[split]]
            write_lines(folder / f"{split}.src", lines)
            write_lines(folder / f"{split}.tgt", lines)
            artifacts += [f"copy/{split}.src", f"copy/{split}.tgt"]
        corpora["copy"] = str(folder)
        gammas = []
    else:
        if data.params_file is not None:
            params = load_params(data.params_file)
            if params.num_source < num_source:
                raise DataError(f"{data.params_file} covers {params.num_source} source words, corpus has {num_source}")
        else:
            params = make_random_params(
                num_source, data.target_words, seed + 1, data.concentration, data.max_fertility, data.p1
            )
        save_params(params, out / PARAMS_FILE)
        artifacts.append(PARAMS_FILE)

        for gamma in gammas:
            name = f"gamma_{gamma:g}"
            folder = out / name
            sampled = sample_corpus(params, source_ids, gamma, seed, threads=config.run.threads)
            kept = [index for index, target in enumerate(sampled) if target]
            dropped = len(sampled) - len(kept)
            if dropped:
                logger.warning(f"Dropped {dropped} empty sample(s) at gamma={gamma:g} before splitting.")
            if len(kept) < data.dev_sentences + data.test_sentences + 1:
                raise DataError(f"too few non-empty samples at gamma={gamma:g} for the requested dev and test sets")
            gamma_ids = [source_ids[index] for index in kept]
            gamma_lines = [source_lines[index] for index in kept]
            targets = [sampled[index] for index in kept]
            bounds = _split_bounds(len(kept), data)
            for split in SPLITS:
                src_lines = gamma_lines[bounds[split]]
                tgt_ids = targets[bounds[split]]
                write_lines(folder / f"{split}.src", src_lines)
                write_lines(folder / f"{split}.tgt", [target_text(sentence) for sentence in tgt_ids])
                artifacts += [f"{name}/{split}.src", f"{name}/{split}.tgt"]

                split_sources = gamma_ids[bounds[split]]
                source_tokens = sum(len(s) for s in split_sources)
                target_tokens = sum(len(t) for t in tgt_ids)
                rows.append(
                    {
                        "gamma": gamma,
                        "split": split,
                        "pairs": len(split_sources),
                        "source_tokens": source_tokens,
                        "target_tokens": target_tokens,
                        "length_ratio": target_tokens / source_tokens,
                        "expected_length_ratio": expected_length_ratio(params, split_sources, gamma),
                        "conditional_entropy": conditional_entropy(list(zip(split_sources, tgt_ids))),
                        "dropped_empty": dropped,
                    }
                )
            corpora[name] = str(folder)
            logger.info(f"Sampled {len(targets)} sentence pairs at gamma={gamma:g} into {folder}")

        write_csv(out / "sample_stats.csv", rows, "sample_stats")
        artifacts.append("sample_stats.csv")

    return {
        "status": "success",
        "message": f"Wrote {len(corpora)} corpus director{'y' if len(corpora) == 1 else 'ies'}.",
        "out_dir": str(out),
        "gammas": gammas,
        "corpora": corpora,
        "artifacts": artifacts,
        "manifest": {"source_seed": seed, "table_seed": seed + 1, "sampling_seed": seed},
    }
