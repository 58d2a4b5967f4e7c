"""File helpers: atomic writes, JSON-lines samples, CSV tables, hashing."""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
import os
from pathlib import Path
from typing import Iterable


def _json_default(obj):
    import numpy as np

    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, non-finite floats as strings."""
    return json.dumps(_clean(obj), sort_keys=True, default=_json_default, separators=(",", ":"))


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    try:
        import numpy as np

        if isinstance(obj, np.floating):
            return _clean(float(obj))
        if isinstance(obj, np.ndarray):
            return _clean(obj.tolist())
    except ImportError:  # pragma: no cover
        pass
    return obj


def digest(obj, length: int = 16) -> str:
    return hashlib.sha256(dumps(obj).encode()).hexdigest()[:length]


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(_clean(obj), sort_keys=True, indent=2, default=_json_default) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_jsonl(path, records: Iterable[dict], meta: dict | None = None) -> None:
    """Write records atomically, one JSON object per line, plus a sidecar."""
    buf = _io.StringIO()
    for rec in records:
        buf.write(dumps(rec))
        buf.write("\n")
    atomic_write_text(path, buf.getvalue())
    if meta is not None:
        write_json(meta_path(path), meta)


def append_jsonl(path, records: Iterable[dict]) -> None:
    """Append by rewriting existing content plus new lines through a temp file."""
    path = Path(path)
    old = path.read_text(encoding="utf-8") if path.exists() else ""
    if old and not old.endswith("\n"):
        # drop a torn final line from an interrupted writer
        old = old[: old.rfind("\n") + 1]
    buf = _io.StringIO(old)
    buf.seek(0, 2)
    for rec in records:
        buf.write(dumps(rec))
        buf.write("\n")
    atomic_write_text(path, buf.getvalue())


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_csv(path, rows: Iterable[dict], columns: list[str], header: dict | None = None) -> None:
    buf = _io.StringIO()
    for k, v in (header or {}).items():
        buf.write(f"# {k}={v}\n")
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    atomic_write_text(path, buf.getvalue())


def read_csv(path) -> tuple[dict, list[dict]]:
    header = {}
    lines = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("# ") and "=" in line and not lines:
                k, v = line[2:].rstrip("\n").split("=", 1)
                header[k] = v
            else:
                lines.append(line)
    return header, list(csv.DictReader(lines))
