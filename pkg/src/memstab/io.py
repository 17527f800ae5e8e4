"""File helpers: atomic writes, CSV with round-trip floats, TOML loading."""

from __future__ import annotations

import os
import sys
import tempfile
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt_float(x) -> str:
    return format(float(x), ".17g")


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (bool, str)) or v is None:
                cells.append("" if v is None else str(v).lower() if isinstance(v, bool) else v)
            elif isinstance(v, (int,)) and not isinstance(v, bool):
                cells.append(str(v))
            else:
                cells.append(fmt_float(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)
