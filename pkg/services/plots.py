"""
Line charts rendered to SVG.

Output is byte-stable for identical inputs: the SVG id salt is fixed, the
creation date is omitted, and text is kept as text rather than glyph paths.
The plotted series are repeated as an XML comment at the top of each file so
plots can be diffed and audited without a renderer.
"""

from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

Series = Dict[str, Tuple[Sequence[float], Sequence[float]]]

SVG_HASH_SALT = "scones-lab"


def _data_comment(title: str, series: Series) -> str:
    lines = [f"title: {title}"]
    for label, (xs, ys) in series.items():
        points = " ".join(f"{float(x):.9g},{float(y):.9g}" for x, y in zip(xs, ys))
        lines.append(f"series {label}: {points}")
    # "--" is not allowed inside XML comments
    body = "\n".join(line.replace("--", "- -") for line in lines)
    return f"<!--\n{body}\n-->\n"


def line_chart(
    path: Union[str, Path],
    title: str,
    xlabel: str,
    ylabel: str,
    series: Series,
    log_x: bool = False,
    y_limits: Optional[Tuple[float, float]] = None,
) -> Path:
    """One line per series, in insertion order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    with plt.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, (xs, ys) in series.items():
            ax.plot(list(xs), list(ys), marker="o", label=label)
        if log_x:
            ax.set_xscale("log", base=2)
        if y_limits is not None:
            ax.set_ylim(*y_limits)
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        if series:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)

    svg = path.read_text(encoding="utf-8")
    head, separator, rest = svg.partition("?>\n")
    if separator:
        svg = head + separator + _data_comment(title, series) + rest
    else:
        svg = _data_comment(title, series) + svg
    path.write_text(svg, encoding="utf-8")
    return path
