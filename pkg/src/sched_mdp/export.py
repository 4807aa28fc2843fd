"""JSON/CSV serialization helpers; floats are written with 12 significant digits."""

import csv
import json
import math
from pathlib import Path

import numpy as np

SIG_DIGITS = 12


def fmt_float(x):
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.{SIG_DIGITS}g}")


def fmt_cell(x):
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.{SIG_DIGITS}g}"
    if isinstance(x, np.integer):
        return str(int(x))
    return "" if x is None else str(x)


def label_action(action):
    """1-based sensor labels joined by '+', e.g. ``(0, 2) -> "1+3"``."""
    return "+".join(str(i + 1) for i in action)


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return fmt_float(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([fmt_cell(x) for x in row])
    return path
