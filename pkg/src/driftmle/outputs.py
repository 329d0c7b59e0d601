"""CSV / JSON writers shared by the library and the CLI."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile

import numpy as np

from .simulate import fmt


def table_csv(header, columns, undefined=None) -> str:
    """RFC-4180 style CSV, LF endings, 17 significant digits.

    ``undefined`` is an optional boolean array per column set; masked cells are left empty.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    n = len(columns[0]) if columns else 0
    for i in range(n):
        row = []
        for j, col in enumerate(columns):
            v = col[i]
            if undefined is not None and undefined[j] is not None and undefined[j][i]:
                row.append("")
            elif isinstance(v, (bool, np.bool_)):
                row.append("true" if v else "false")
            elif isinstance(v, (int, np.integer)):
                row.append(str(int(v)))
            elif isinstance(v, str):
                row.append(v)
            else:
                row.append(fmt(v))
        w.writerow(row)
    return buf.getvalue()


def dumps_json(obj) -> str:
    """UTF-8 JSON with stable key order."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def atomic_write(path, data: str | bytes):
    """Write via a temp file in the target directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    mode = "wb" if isinstance(data, bytes) else "w"
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
