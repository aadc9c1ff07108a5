"""
Artifact I/O -- JSON, CSV and plain-text outputs.

Every file is written atomically: content goes to a temp file in the
target directory and is then renamed over the destination, so a crashed
run never leaves a half-written model or report behind.

JSON is written with indent=2 and sorted-by-insertion keys; numpy scalars
and arrays are converted on the way out.  Nothing time-dependent is ever
written, so identical runs give byte-identical files.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any

import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from riskrules.errors import DataError

TEMPLATE_DIR = Path(__file__).resolve().parent / "templates"


class _NumpyEncoder(json.JSONEncoder):
    """JSON encoder that handles numpy types."""

    def default(self, obj):
        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return float(obj)
        if isinstance(obj, np.bool_):
            return bool(obj)
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, Path):
            return str(obj)
        return super().default(obj)


def _atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write text to path via temp file + rename in the same directory."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp",
                               dir=str(target.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, cls=_NumpyEncoder, ensure_ascii=False, indent=2) + "\n"


def write_json(path: str | os.PathLike, obj: Any) -> None:
    _atomic_write(path, dumps_json(obj))


def write_text(path: str | os.PathLike, text: str) -> None:
    if text and not text.endswith("\n"):
        text += "\n"
    _atomic_write(path, text)


def write_frame(path: str | os.PathLike, frame) -> None:
    """Write a pandas DataFrame as UTF-8 CSV without the index column."""
    _atomic_write(path, frame.to_csv(index=False, lineterminator="\n"))


def read_json(path: str | os.PathLike) -> dict[str, Any]:
    if not os.path.exists(path):
        raise DataError(f"Input not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise DataError(f"{path}: expected a JSON object at top level")
    return data


# =====================================================================
# Templates
# =====================================================================

_ENV: Environment | None = None


def render_template(name: str, **context: Any) -> str:
    """Render one of the text templates under riskrules/templates."""
    global _ENV
    if _ENV is None:
        _ENV = Environment(
            loader=FileSystemLoader(str(TEMPLATE_DIR)),
            undefined=StrictUndefined,
            keep_trailing_newline=True,
            trim_blocks=True,
            lstrip_blocks=True,
        )
    return _ENV.get_template(name).render(**context)
