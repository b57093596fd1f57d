"""
Result writers.

CSV output uses '.' decimals, no thousands separators, LF line endings and
a mandatory header. JSON output is key-sorted so reruns are byte-identical.
"""

import csv
import hashlib
import io
import json
import logging
import math
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, TextIO, Tuple, Union

from pydantic import BaseModel
from tabulate import tabulate

from permcd import __version__

logger = logging.getLogger(__name__)

PathLike = Union[str, Path, None]


def build_id(config: BaseModel) -> str:
    """Package version plus a digest of the validated configuration"""
    data = config.model_dump(mode="json")
    # pool size does not change results
    data.pop("workers", None)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return f"{__version__}+{hashlib.sha1(canonical.encode()).hexdigest()[:10]}"


@contextmanager
def open_output(path: PathLike) -> Iterator[TextIO]:
    """Text stream for ``path``; None or '-' means stdout"""
    if path is None or str(path) == "-":
        yield sys.stdout
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        yield f
    logger.info(f"Wrote {path}")


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    return value


def write_csv(rows: Sequence[Dict[str, Any]], stream: TextIO,
              columns: Optional[List[str]] = None) -> None:
    """Write dict rows; columns default to the keys of the first row"""
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    writer = csv.DictWriter(stream, fieldnames=columns, lineterminator="\n", extrasaction="raise")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(row.get(k)) for k in columns})


def csv_text(rows: Sequence[Dict[str, Any]], columns: Optional[List[str]] = None) -> str:
    buffer = io.StringIO()
    write_csv(rows, buffer, columns)
    return buffer.getvalue()


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_json(payload: Any, stream: TextIO) -> None:
    stream.write(json.dumps(_jsonable(payload), indent=2, sort_keys=True))
    stream.write("\n")


def format_ab(value: Optional[float], digits: int = 4) -> str:
    """Scientific value in a(b) form: 2.1723e-02 -> 2.1723(-2)"""
    if value is None or not math.isfinite(value):
        return "n/a"
    if value == 0:
        return f"{0:.{digits}f}(0)"
    mantissa, exponent = f"{value:.{digits}e}".split("e")
    return f"{mantissa}({int(exponent)})"


def render_table(columns: Sequence[Dict[str, Any]], metrics: Sequence[Tuple[str, str]],
                 flag_key: str = "regime_ok") -> str:
    """
    Metrics as rows, one column per grid point.

    Args:
        columns: One dict per grid point with a ``delta`` key
        metrics: (row label, key) pairs
        flag_key: Grid points whose flag is false get a '*' on their header
    """
    headers = ["delta"] + [
        format_ab(c["delta"]) + ("" if c.get(flag_key, True) else "*") for c in columns
    ]
    body = [[label] + [format_ab(c.get(key)) for c in columns] for label, key in metrics]
    return tabulate(body, headers=headers, tablefmt="simple")
