from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

import pandas as pd

from config.app import CSV_FLOAT_FORMAT, CSV_SCHEMAS
from utils.errors import DataError

TEXT_COLUMNS = ("system", "head", "mark", "split", "mode")


def write_csv(
    path: Union[str, Path], rows: Iterable[Mapping], schema: str, comment: Optional[str] = None
) -> Path:
    """Write rows with the documented column order; floats keep 9 significant digits.

    An optional comment becomes a leading `# ...` line.
    """
    columns = CSV_SCHEMAS[schema]
    frame = pd.DataFrame(list(rows), columns=columns)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if comment:
            f.write(f"# {comment}\n")
        frame.to_csv(f, index=False, float_format=CSV_FLOAT_FORMAT, na_rep="nan", lineterminator="\n")
    return path


def read_csv(path: Union[str, Path], schema: str) -> pd.DataFrame:
    """Read a CSV written by write_csv and check its columns against the schema."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"CSV file not found: {path}")
    frame = pd.read_csv(
        path,
        comment="#",
        keep_default_na=False,
        na_values=["nan"],
        dtype={column: str for column in TEXT_COLUMNS},
    )
    expected = CSV_SCHEMAS[schema]
    missing = [column for column in expected if column not in frame.columns]
    if missing:
        raise DataError(f"{path} is missing columns: {', '.join(missing)}", details=missing)
    return frame[expected]


def read_comment(path: Union[str, Path]) -> Optional[str]:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().rstrip("\n")
    return first[2:] if first.startswith("# ") else None
