"""
Command-line entry point.

    python run.py [--config PATH] [--seed N] [--out DIR] [--threads N] <command> [options]

Every command runs through the middleware pipeline configured in
`config/app.py`; the process exits with the command's exit code
(0 success, 2 config error, 3 data error, 4 numeric failure, 1 unexpected).
"""

import argparse
import sys
from typing import Dict, List, Optional

from utils.errors import LabError
from utils.experiment_config import load_experiment_config
from utils.logger import logger
from utils.tools import COMMANDS, CommandRequest, build_pipeline

# importing the command modules registers them in COMMANDS
import tools.build_report  # noqa: F401
import tools.decode_file  # noqa: F401
import tools.evaluate_translations  # noqa: F401
import tools.sample_data  # noqa: F401
import tools.sweep_alpha  # noqa: F401
import tools.sweep_beam  # noqa: F401
import tools.train_model  # noqa: F401


def float_list(value: str) -> List[float]:
    return [float(item) for item in value.split(",") if item.strip()]


def int_list(value: str) -> List[int]:
    return [int(item) for item in value.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="run.py",
        description="SCONES and softmax sequence-to-sequence experiments on synthetic corpora.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--config", help="Experiment INI file; built-in defaults when omitted")
    parser.add_argument("--seed", type=int, help="Overrides [run] seed")
    parser.add_argument("--out", help="Overrides [run] out_dir")
    parser.add_argument("--threads", type=int, help="Overrides [run] threads")
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    sample = commands.add_parser("sample-data", help="Sample synthetic parallel corpora")
    sample.add_argument("--gammas", type=float_list, help="Comma separated temperatures")

    train = commands.add_parser("train", help="Train one model")
    train.add_argument("--head", choices=["softmax", "scones"])
    train.add_argument("--alpha", type=float)
    train.add_argument("--lambda", dest="smoothing", type=float, help="SCONES label smoothing")
    train.add_argument("--data-dir", help="Directory with train/dev/test .src/.tgt files")

    decode = commands.add_parser("decode", help="Translate a file")
    decode.add_argument("--checkpoint", required=True)
    decode.add_argument("--input", dest="input_path", required=True)
    decode.add_argument("--output", dest="output_path")
    decode.add_argument("--mode", choices=["greedy", "beam", "exact", "enumerate"])
    decode.add_argument("--beam-size", type=int)
    decode.add_argument("--max-states", type=int)
    decode.add_argument("--max-len", type=int)

    evaluate = commands.add_parser("evaluate", help="Score translation files with BLEU")
    evaluate.add_argument("hypotheses", nargs="+", help="Translation files; the first is the baseline")
    evaluate.add_argument("--reference", dest="reference_path", required=True)
    evaluate.add_argument("--names", type=lambda value: value.split(","), help="Comma separated system names")
    evaluate.add_argument("--compare", action="store_true", help="Paired bootstrap against the first system")
    evaluate.add_argument("--resamples", type=int)

    sweep_beam = commands.add_parser("sweep-beam", help="BLEU, length ratio and search errors per beam size")
    sweep_beam.add_argument("--checkpoint", dest="checkpoints", action="append", required=True)
    sweep_beam.add_argument("--source", dest="source_path")
    sweep_beam.add_argument("--reference", dest="reference_path")
    sweep_beam.add_argument("--beam-sizes", type=int_list)

    sweep_alpha = commands.add_parser("sweep-alpha", help="Train and compare one model per alpha")
    sweep_alpha.add_argument("--alphas", type=float_list)
    sweep_alpha.add_argument("--softmax", dest="include_softmax", action=argparse.BooleanOptionalAction, default=None)

    report = commands.add_parser("report", help="Tables and plots for a run directory")
    report.add_argument("run_dir", nargs="?")
    return parser


def run(argv: Optional[List[str]] = None) -> Dict:
    args = vars(build_parser().parse_args(argv))
    name = args.pop("command")
    run_overrides = {
        "seed": args.pop("seed"),
        "out_dir": args.pop("out"),
        "threads": args.pop("threads"),
    }
    try:
        config = load_experiment_config(args.pop("config"))
        config = config.with_overrides("run", **run_overrides)
    except LabError as error:
        logger.error(f"{error.message}", extra={"details": error.details})
        return {
            "status": "error",
            "error": {"message": error.message, "details": error.details},
            "exit_code": error.exit_code,
        }

    params = {key: value for key, value in args.items() if value is not None}
    pipeline = build_pipeline()
    return pipeline(CommandRequest(name=name, func=COMMANDS[name], config=config, params=params))


def main(argv: Optional[List[str]] = None) -> int:
    result = run(argv)
    if result.get("status") == "success":
        print(result.get("message", "done"))
        return 0
    error = result.get("error", {})
    print(f"error: {error.get('message')}", file=sys.stderr)
    if error.get("details"):
        print(f"details: {error['details']}", file=sys.stderr)
    return int(result.get("exit_code", 1))


if __name__ == "__main__":
    sys.exit(main())
