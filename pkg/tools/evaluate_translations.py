from pathlib import Path
from typing import Dict, List, Optional

from pydantic import Field
from typing_extensions import Annotated

from config.app import BOOTSTRAP_RESAMPLES
from services.data import read_lines
from services.evaluation import corpus_bleu, paired_bootstrap, significance_mark
from utils.csv_io import write_csv
from utils.errors import ConfigError
from utils.logger import logger
from utils.tools import doc_name, doc_tag


@doc_tag("Evaluation")
@doc_name("Evaluate")
def cmd_evaluate(
    config,
    hypotheses: Annotated[List[str], Field(description="Translation files, the first one is the baseline.")],
    reference_path: Annotated[str, Field(description="Reference translations, one per line.")],
    names: Annotated[Optional[List[str]], Field(description="System names; file stems by default.")] = None,
    compare: Annotated[bool, Field(description="Paired bootstrap of every system against the first.")] = False,
    resamples: Annotated[int, Field(ge=100, description="Bootstrap resamples.")] = BOOTSTRAP_RESAMPLES,
    out_dir: Annotated[Optional[str], Field(description="Output directory; defaults to run.out_dir.")] = None,
) -> Dict:
    """
    Scores translation files with corpus BLEU and optional significance marks

    With `compare` every system after the first gets the p-value of
    BLEU(system) <= BLEU(baseline) over bootstrap resamples, its win rate and
    a mark ("‡" below .01, "†" below .05).

    Args:
    - hypotheses (List[str]): Translation files.
    - reference_path (str): Reference file.
    - names (List[str]): Display names.
    - compare (bool): Run the paired bootstrap.
    - resamples (int): Number of bootstrap resamples.
    - out_dir (str): Output directory.

    Returns:
        - dict: Status and one metrics dict per system.
    """
    if not hypotheses:
        raise ConfigError("at least one hypothesis file is required")
    config.require_paths(reference_path, *hypotheses)
    names = list(names or [Path(path).stem for path in hypotheses])
    if len(names) != len(hypotheses):
        raise ConfigError(f"{len(names)} names given for {len(hypotheses)} systems")
    out = Path(out_dir or config.run.out_dir)

    references = read_lines(reference_path)
    systems = [read_lines(path) for path in hypotheses]
    rows = []
    for index, (name, lines) in enumerate(zip(names, systems)):
        row = {"system": name, **corpus_bleu(lines, references).as_row()}
        row.update(p_value=float("nan"), win_rate=float("nan"), mark="")
        if compare and index > 0:
            p_value, win_rate = paired_bootstrap(lines, systems[0], references, resamples, seed=config.run.seed)
            row.update(p_value=p_value, win_rate=win_rate, mark=significance_mark(p_value))
        logger.info(f"{name}: BLEU {row['bleu']:.2f}{row['mark']} length ratio {row['length_ratio']:.3f}")
        rows.append(row)

    write_csv(out / "evaluate.csv", rows, "evaluate")
    return {
        "status": "success",
        "message": f"Scored {len(rows)} system(s).",
        "out_dir": str(out),
        "systems": rows,
        "artifacts": ["evaluate.csv"],
    }
