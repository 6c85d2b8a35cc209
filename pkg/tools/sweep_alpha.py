from pathlib import Path
from typing import Dict, List, Optional

from pydantic import Field
from typing_extensions import Annotated

from services.bundle import ModelBundle, encode_sources, empty_scores, load_bundle, render, train_and_save, translate
from services.data import read_lines, write_lines
from services.evaluation import corpus_bleu, logprob_stats
from services.losses import LossSpec
from utils.csv_io import write_csv
from utils.logger import logger
from utils.tools import doc_name, doc_tag

BEAM_SIZE = 4


def loss_specs(base: LossSpec, alphas: List[float], include_softmax: bool) -> Dict[str, LossSpec]:
    """Folder name -> loss spec; the softmax baseline comes first."""
    settings = base.model_dump(by_alias=True)
    specs = {}
    if include_softmax:
        specs["softmax"] = LossSpec.model_validate({**settings, "head": "softmax"})
    for alpha in alphas:
        specs[f"alpha_{alpha:g}"] = LossSpec.model_validate({**settings, "head": "scones", "alpha": alpha})
    return specs


def evaluate_model(bundle: ModelBundle, source_lines: List[str], references: List[str], config, folder: Path) -> Dict:
    """Greedy, beam-4 and exact translations of the test set plus the exact/empty score statistics."""
    settings = config.decode
    threads = config.run.threads
    sources = encode_sources(bundle, source_lines)

    outputs = {}
    exact_results = None
    for name, mode in (("greedy", "greedy"), (f"beam{BEAM_SIZE}", "beam"), ("exact", "exact")):
        results, _ = translate(
            bundle,
            sources,
            mode,
            beam_size=BEAM_SIZE,
            max_len=settings.max_len,
            max_states=settings.max_states,
            threads=threads,
        )
        write_lines(folder / f"{name}.txt", render(bundle, results))
        outputs[name] = corpus_bleu(read_lines(folder / f"{name}.txt"), references)
        if mode == "exact":
            exact_results = results

    exact_mean, exact_std = logprob_stats([result.score for result in exact_results])
    empty_mean, empty_std = logprob_stats(empty_scores(bundle, sources))
    return {
        "head": bundle.head,
        "alpha": bundle.spec.alpha if bundle.head == "scones" else float("nan"),
        "greedy_bleu": outputs["greedy"].bleu,
        "beam4_bleu": outputs[f"beam{BEAM_SIZE}"].bleu,
        "exact_bleu": outputs["exact"].bleu,
        "exact_length_ratio": outputs["exact"].length_ratio,
        "exact_logprob_mean": exact_mean,
        "exact_logprob_std": exact_std,
        "empty_logprob_mean": empty_mean,
        "empty_logprob_std": empty_std,
        "logprob_gap": exact_mean - empty_mean,
        "exact_bleu_vs_softmax_beam4": float("nan"),
    }


@doc_tag("Experiments")
@doc_name("Sweep alpha")
def cmd_sweep_alpha(
    config,
    alphas: Annotated[Optional[List[float]], Field(description="Overrides sweep.alphas.")] = None,
    include_softmax: Annotated[Optional[bool], Field(description="Overrides sweep.include_softmax.")] = None,
    out_dir: Annotated[Optional[str], Field(description="Output directory; defaults to run.out_dir.")] = None,
) -> Dict:
    """
    Trains one SCONES model per alpha on the same data and compares greedy, beam and exact search

    All models share the data, the seed and every setting except the loss.
    Each model gets its own directory (`softmax/`, `alpha_<a>/`) with its
    checkpoints and its `greedy.txt`, `beam4.txt` and `exact.txt`
    translations of the test set. The BLEU columns of `sweep_alpha.csv` are
    computed from those files. `logprob_gap` is the mean exact-search score
    minus the mean score of the empty translation.

    Args:
    - alphas (List[float]): Alpha grid.
    - include_softmax (bool): Train a softmax baseline too.
    - out_dir (str): Output directory.

    Returns:
        - dict: Status and one row per trained model.
    """
    config = config.with_overrides("sweep", alphas=alphas, include_softmax=include_softmax)
    test_source, test_target = config.data.split_paths("test")
    config.require_paths(test_source, test_target)
    out = Path(out_dir or config.run.out_dir)

    source_lines = read_lines(test_source)
    references = read_lines(test_target)
    if config.sweep.max_sentences is not None:
        source_lines = source_lines[: config.sweep.max_sentences]
        references = references[: config.sweep.max_sentences]

    rows = []
    artifacts = ["sweep_alpha.csv"]
    for name, spec in loss_specs(config.loss, config.sweep.alphas, config.sweep.include_softmax).items():
        folder = out / name
        _, best_path = train_and_save(config, spec, folder)
        rows.append(evaluate_model(load_bundle(best_path), source_lines, references, config, folder))
        artifacts.append(name)
        logger.info(
            f"{spec.describe()}: greedy {rows[-1]['greedy_bleu']:.2f} beam{BEAM_SIZE} {rows[-1]['beam4_bleu']:.2f} "
            f"exact {rows[-1]['exact_bleu']:.2f} (length ratio {rows[-1]['exact_length_ratio']:.3f})"
        )

    if config.sweep.include_softmax:
        baseline = rows[0]["beam4_bleu"]
        for row in rows:
            row["exact_bleu_vs_softmax_beam4"] = row["exact_bleu"] - baseline

    write_csv(out / "sweep_alpha.csv", rows, "sweep_alpha")
    return {
        "status": "success",
        "message": f"Trained and evaluated {len(rows)} model(s).",
        "out_dir": str(out),
        "rows": rows,
        "artifacts": artifacts,
    }
