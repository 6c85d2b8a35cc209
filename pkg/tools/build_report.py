from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd
from pydantic import Field
from typing_extensions import Annotated

from services.plots import line_chart
from utils.csv_io import read_csv
from utils.errors import DataError
from utils.logger import logger
from utils.tools import doc_name, doc_tag

REPORT_DIR = "report"

# CSV file name -> schema
REPORTED_FILES = {
    "sample_stats.csv": "sample_stats",
    "train_log.csv": "train_log",
    "evaluate.csv": "evaluate",
    "sweep_beam.csv": "sweep_beam",
    "sweep_alpha.csv": "sweep_alpha",
}


def find_csvs(run_dir: Path) -> List[Path]:
    found = [
        path
        for path in run_dir.rglob("*.csv")
        if path.name in REPORTED_FILES and REPORT_DIR not in path.relative_to(run_dir).parts[:-1]
    ]
    return sorted(found, key=lambda path: path.relative_to(run_dir).as_posix())


def output_stem(run_dir: Path, path: Path) -> str:
    """`softmax/train_log.csv` -> `softmax__train_log`."""
    return "__".join(path.relative_to(run_dir).with_suffix("").parts)


def system_label(head: str, alpha: float) -> str:
    return "softmax" if head == "softmax" else f"scones alpha={alpha:g}"


def by_system(frame: pd.DataFrame, x: str, y: str) -> Dict:
    """One (x, y) series per head/alpha pair; softmax rows carry no alpha."""
    series = {}
    keyed = frame.assign(alpha=frame["alpha"].fillna(0.0))
    for (head, alpha), group in keyed.groupby(["head", "alpha"], sort=True):
        group = group.sort_values(x)
        series[system_label(head, alpha)] = (group[x].tolist(), group[y].tolist())
    return series


def plot_sample_stats(frame: pd.DataFrame, stem: str, folder: Path) -> List[Path]:
    paths = []
    for column, ylabel in (("conditional_entropy", "H(target | source) [bits]"), ("length_ratio", "target / source tokens")):
        series = {
            split: (group.sort_values("gamma")["gamma"].tolist(), group.sort_values("gamma")[column].tolist())
            for split, group in frame.groupby("split", sort=True)
        }
        paths.append(line_chart(folder / f"{stem}__{column}.svg", f"{column} by temperature", "gamma", ylabel, series))
    return paths


def plot_train_log(frame: pd.DataFrame, stem: str, folder: Path) -> List[Path]:
    steps = frame["step"].tolist()
    return [
        line_chart(
            folder / f"{stem}__loss.svg",
            "training and dev loss",
            "step",
            "loss",
            {"train": (steps, frame["train_loss"].tolist()), "dev": (steps, frame["dev_loss"].tolist())},
        ),
        line_chart(
            folder / f"{stem}__dev_bleu.svg",
            "dev greedy BLEU",
            "step",
            "BLEU",
            {"dev greedy": (steps, frame["dev_greedy_bleu"].tolist())},
        ),
    ]


def plot_sweep_beam(frame: pd.DataFrame, stem: str, folder: Path) -> List[Path]:
    paths = []
    for column, ylabel in (
        ("bleu", "BLEU"),
        ("length_ratio", "length ratio"),
        ("mean_logprob", "mean log-probability"),
        ("search_error_rate", "search error rate"),
    ):
        paths.append(
            line_chart(
                folder / f"{stem}__{column}.svg",
                f"{ylabel} by beam size",
                "beam size",
                ylabel,
                by_system(frame, "beam_size", column),
                log_x=True,
            )
        )
    return paths


def plot_sweep_alpha(frame: pd.DataFrame, stem: str, folder: Path) -> List[Path]:
    scones = frame[frame["head"] == "scones"].sort_values("alpha")
    alphas = scones["alpha"].tolist()
    paths = [
        line_chart(
            folder / f"{stem}__bleu.svg",
            "BLEU by alpha",
            "alpha",
            "BLEU",
            {name: (alphas, scones[f"{name}_bleu"].tolist()) for name in ("greedy", "beam4", "exact")},
        ),
        line_chart(
            folder / f"{stem}__exact_length_ratio.svg",
            "exact search length ratio by alpha",
            "alpha",
            "length ratio",
            {"exact": (alphas, scones["exact_length_ratio"].tolist())},
        ),
        line_chart(
            folder / f"{stem}__logprob_gap.svg",
            "exact minus empty translation log-probability",
            "alpha",
            "log-probability gap",
            {"gap": (alphas, scones["logprob_gap"].tolist())},
        ),
    ]
    return paths


PLOTTERS = {
    "sample_stats": plot_sample_stats,
    "train_log": plot_train_log,
    "sweep_beam": plot_sweep_beam,
    "sweep_alpha": plot_sweep_alpha,
}


def write_table(frame: pd.DataFrame, path: Path) -> Path:
    text = frame.to_string(index=False, float_format=lambda value: f"{value:.4f}", na_rep="-")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n", encoding="utf-8")
    return path


@doc_tag("Experiments")
@doc_name("Report")
def cmd_report(
    config,
    run_dir: Annotated[Optional[str], Field(description="Run directory to summarize; defaults to run.out_dir.")] = None,
) -> Dict:
    """
    Renders every result CSV under a run directory as a text table and SVG line charts

    Files go to `<run_dir>/report/`, named after the CSV's path relative to the
    run directory. Rerunning over unchanged CSVs rewrites identical files.

    Args:
    - run_dir (str): Directory holding CSVs written by the other commands.

    Returns:
        - dict: Status and the written tables and plots.
    """
    root = Path(run_dir or config.run.out_dir)
    if not root.is_dir():
        raise DataError(f"nothing to report: {root} is not a directory")
    csvs = find_csvs(root)
    if not csvs:
        raise DataError(f"nothing to report: no result CSVs under {root}")

    folder = root / REPORT_DIR
    tables: List[str] = []
    plots: List[str] = []
    for path in csvs:
        schema = REPORTED_FILES[path.name]
        frame = read_csv(path, schema)
        stem = output_stem(root, path)
        tables.append(write_table(frame, folder / f"{stem}.txt").name)
        if schema in PLOTTERS and not frame.empty:
            plots += [plot.name for plot in PLOTTERS[schema](frame, stem, folder)]
        logger.debug(f"Reported {path}")

    return {
        "status": "success",
        "message": f"Wrote {len(tables)} table(s) and {len(plots)} plot(s).",
        "out_dir": str(folder),
        "tables": tables,
        "plots": plots,
        "artifacts": tables + plots,
    }
