from pathlib import Path
from typing import Dict, List, Optional

from pydantic import Field
from typing_extensions import Annotated

from services.bundle import ModelBundle, encode_sources, load_bundle, render, translate
from services.data import read_lines, write_lines
from services.decode import count_search_errors, finished_mean_score
from services.evaluation import corpus_bleu
from tools.decode_file import score_rows
from utils.csv_io import write_csv
from utils.errors import ConfigError
from utils.logger import logger
from utils.tools import doc_name, doc_tag


def system_folder(bundle: ModelBundle) -> str:
    return "softmax" if bundle.head == "softmax" else f"scones_alpha_{bundle.spec.alpha:g}"


def sweep_one(
    bundle: ModelBundle,
    sources: List[List[int]],
    references: List[str],
    beam_sizes: List[int],
    config,
    folder: Path,
    run_exact: bool,
) -> List[Dict]:
    """Rows of the beam sweep for one model; translations are written under `folder`."""
    settings = config.decode
    threads = config.run.threads
    record = config.run.record_timings

    exact_results = None
    if run_exact:
        exact_results, _ = translate(
            bundle, sources, "exact", max_len=settings.max_len, max_states=settings.max_states, threads=threads
        )
        write_lines(folder / "exact.txt", render(bundle, exact_results))
        write_csv(folder / "exact.txt.scores.csv", score_rows(exact_results, record), "decode_scores")

    rows = []
    for beam_size in beam_sizes:
        results, elapsed = translate(bundle, sources, "beam", beam_size=beam_size, max_len=settings.max_len, threads=threads)
        hypotheses = render(bundle, results)
        write_lines(folder / f"beam_{beam_size}.txt", hypotheses)
        report = corpus_bleu(hypotheses, references)
        row = {
            "head": bundle.head,
            "alpha": bundle.spec.alpha if bundle.head == "scones" else float("nan"),
            "beam_size": beam_size,
            "bleu": report.bleu,
            "length_ratio": report.length_ratio,
            "search_error_rate": float("nan"),
            "mean_logprob": finished_mean_score(results),
            "num_sentences": len(results),
            "num_exact_excluded": 0,
            "exact_not_terminated": float("nan"),
            "throughput": len(results) / elapsed if record and elapsed > 0 else 0.0,
        }
        if exact_results is not None:
            summary = count_search_errors(results, exact_results)
            row.update(
                search_error_rate=summary.rate,
                num_exact_excluded=summary.excluded,
                exact_not_terminated=summary.excluded / len(results),
            )
        logger.info(
            f"{bundle.label} beam {beam_size}: BLEU {row['bleu']:.2f} ratio {row['length_ratio']:.3f} "
            f"search errors {row['search_error_rate']:.3f}"
        )
        rows.append(row)
    return rows


@doc_tag("Experiments")
@doc_name("Sweep beam")
def cmd_sweep_beam(
    config,
    checkpoints: Annotated[List[str], Field(description="One or more trained checkpoints.")],
    source_path: Annotated[Optional[str], Field(description="Test sources; defaults to the data test split.")] = None,
    reference_path: Annotated[Optional[str], Field(description="Test references; defaults to the data test split.")] = None,
    beam_sizes: Annotated[Optional[List[int]], Field(description="Overrides decode.beam_sizes.")] = None,
    out_dir: Annotated[Optional[str], Field(description="Output directory; defaults to run.out_dir.")] = None,
) -> Dict:
    """
    Decodes a test set with every beam size and compares against exact search

    One row per checkpoint and beam size goes to `sweep_beam.csv`. Sentences
    whose exact search hit the state cap are left out of the search error
    rate and counted in `num_exact_excluded`.

    Args:
    - checkpoints (List[str]): Trained checkpoints.
    - source_path (str): Test source file.
    - reference_path (str): Test reference file.
    - beam_sizes (List[int]): Ascending beam sizes.
    - out_dir (str): Output directory.

    Returns:
        - dict: Status and the sweep rows.
    """
    if not checkpoints:
        raise ConfigError("at least one checkpoint is required")
    if beam_sizes is not None:
        config = config.with_overrides("decode", beam_sizes=beam_sizes)
    test_source, test_target = config.data.split_paths("test")
    source_path = source_path or test_source
    reference_path = reference_path or test_target
    config.require_paths(source_path, reference_path, *checkpoints)
    out = Path(out_dir or config.run.out_dir)

    source_lines = read_lines(source_path)
    references = read_lines(reference_path)
    if config.sweep.max_sentences is not None:
        source_lines = source_lines[: config.sweep.max_sentences]
        references = references[: config.sweep.max_sentences]

    rows = []
    artifacts = ["sweep_beam.csv"]
    for checkpoint in checkpoints:
        bundle = load_bundle(checkpoint)
        folder = out / system_folder(bundle)
        rows += sweep_one(
            bundle,
            encode_sources(bundle, source_lines),
            references,
            config.decode.beam_sizes,
            config,
            folder,
            config.sweep.run_exact,
        )
        artifacts.append(folder.name)

    write_csv(out / "sweep_beam.csv", rows, "sweep_beam")
    return {
        "status": "success",
        "message": f"Swept {len(config.decode.beam_sizes)} beam size(s) for {len(checkpoints)} checkpoint(s).",
        "out_dir": str(out),
        "rows": rows,
        "artifacts": artifacts,
    }
