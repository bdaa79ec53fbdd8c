"""Deterministic writers for CSV, JSON and binary PGM outputs.

Floats in CSV files use Python's shortest round-trip decimal form, so
parsing a value and writing it back reproduces the same text. Files start
with one ``#`` comment line recording that choice.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FLOAT_FORMAT_NOTE = "# float-format: shortest round-trip decimal (repr)"


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    buf.write(FLOAT_FORMAT_NOTE + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_value(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path: str | Path) -> tuple[list[str], list[dict]]:
    """Header and rows (as string dicts) of a CSV written by :func:`write_csv`."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError(f"{path}: missing header") from None
    rows = [dict(zip(header, r)) for r in reader]
    return header, rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(path: str | Path, data: dict) -> None:
    """Sorted-key JSON; non-finite floats become null."""
    text = json.dumps(_jsonable(data), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_pgm(path: str | Path, image) -> dict:
    """8-bit binary PGM with linear min-max scaling; returns the scaling used.

    NaN pixels are written as 0. A constant image maps to mid-grey.
    """
    a = np.asarray(image, dtype=float)
    if a.ndim != 2:
        raise ValueError("PGM images must be two-dimensional")
    finite = np.isfinite(a)
    lo = float(a[finite].min()) if finite.any() else 0.0
    hi = float(a[finite].max()) if finite.any() else 0.0
    if hi > lo:
        scaled = np.round((a - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.full(a.shape, 128.0)
    pix = np.where(finite, scaled, 0.0).clip(0, 255).astype(np.uint8)
    h, w = pix.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())
    return {"min": lo, "max": hi, "width": w, "height": h}


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
