from pathlib import Path
from typing import Dict, Literal, Optional

from pydantic import Field
from typing_extensions import Annotated

from services.bundle import encode_sources, load_bundle, render, translate
from services.data import read_lines, write_lines
from utils.csv_io import write_csv
from utils.tools import doc_name, doc_tag


def score_rows(results, record_timings: bool):
    return [
        {
            "line": line,
            "score": result.score,
            "length": len(result.tokens) - (1 if result.finished else 0),
            "states_explored": result.states_explored,
            "exact": int(result.is_exact),
            "finished": int(result.finished),
            "wall_time": result.wall_time if record_timings else 0.0,
        }
        for line, result in enumerate(results, start=1)
    ]


@doc_tag("Decoding")
@doc_name("Decode")
def cmd_decode(
    config,
    checkpoint: Annotated[str, Field(description="Path of a checkpoint written by the train command.")],
    input_path: Annotated[str, Field(description="Source sentences, one per line.")],
    output_path: Annotated[Optional[str], Field(description="Translations file; defaults to <out>/translations.txt.")] = None,
    mode: Annotated[
        Optional[Literal["greedy", "beam", "exact", "enumerate"]], Field(description="Overrides decode.mode.")
    ] = None,
    beam_size: Annotated[Optional[int], Field(ge=1, description="Overrides decode.beam_size.")] = None,
    max_states: Annotated[Optional[int], Field(ge=1, description="Overrides decode.max_states.")] = None,
    max_len: Annotated[Optional[int], Field(ge=1, description="Overrides decode.max_len.")] = None,
) -> Dict:
    """
    Translates a file with greedy, beam, exact or brute-force search

    Next to the translations a `<output>.scores.csv` sidecar lists score,
    length, explored states, exactness and wall time per sentence, and
    `<output>.summary.csv` holds the throughput.

    Args:
    - checkpoint (str): Trained checkpoint.
    - input_path (str): Source file.
    - output_path (str): Translation file.
    - mode (str): greedy, beam, exact or enumerate.
    - beam_size (int): Beam size for beam mode.
    - max_states (int): State cap for exact mode.
    - max_len (int): Output length cap.

    Returns:
        - dict: Status, output paths, sentence count and throughput.
    """
    config = config.with_overrides("decode", mode=mode, beam_size=beam_size, max_states=max_states, max_len=max_len)
    settings = config.decode
    config.require_paths(checkpoint, input_path)
    output = Path(output_path) if output_path else Path(config.run.out_dir) / "translations.txt"

    bundle = load_bundle(checkpoint)
    sources = encode_sources(bundle, read_lines(input_path))
    results, elapsed = translate(
        bundle,
        sources,
        settings.mode,
        beam_size=settings.beam_size,
        max_len=settings.max_len,
        max_states=settings.max_states,
        threads=config.run.threads,
    )
    write_lines(output, render(bundle, results))

    record = config.run.record_timings
    scores_path = output.with_name(output.name + ".scores.csv")
    summary_path = output.with_name(output.name + ".summary.csv")
    write_csv(scores_path, score_rows(results, record), "decode_scores", comment=f"{bundle.spec.describe()} mode={settings.mode}")
    throughput = len(results) / elapsed if record and elapsed > 0 else 0.0
    approximate = sum(1 for result in results if result.exactness == "approximate")
    write_csv(
        summary_path,
        [
            {
                "mode": settings.mode,
                "beam_size": settings.beam_size if settings.mode == "beam" else 1,
                "sentences": len(results),
                "wall_time": elapsed if record else 0.0,
                "throughput": throughput,
                "approximate": approximate,
            }
        ],
        "decode_summary",
    )

    return {
        "status": "success",
        "message": f"Decoded {len(results)} sentence(s) with {settings.mode} search.",
        "out_dir": str(output.parent),
        "output_path": str(output),
        "sentences": len(results),
        "throughput": throughput,
        "approximate": approximate,
        "artifacts": [output.name, scores_path.name, summary_path.name],
    }
