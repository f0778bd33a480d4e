"""Summary table writers and readers (CSV and versioned JSON)."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, fields
from pathlib import Path

from .runner import SUMMARY_FIELDS, ReplicateRecord, SummaryRow

SCHEMA = "switchlab.summary"
SCHEMA_VERSION = 1
_STR_FIELDS = ("scenario", "design", "axis")


class OutputError(OSError):
    pass


def _atomic_write(path: Path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def _num(x):
    # JSON has no NaN; store missing metrics as null
    return None if isinstance(x, float) and math.isnan(x) else x


def summary_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for r in rows:
        w.writerow([repr(getattr(r, f)) if isinstance(getattr(r, f), float) else getattr(r, f)
                    for f in SUMMARY_FIELDS])
    return buf.getvalue()


def summary_from_csv(text: str) -> list[SummaryRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != SUMMARY_FIELDS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    out = []
    for rec in reader:
        kw = {k: (v if k in _STR_FIELDS else float(v)) for k, v in rec.items()}
        out.append(SummaryRow(**kw))
    return out


def summary_to_json(rows, meta: dict | None = None) -> str:
    doc = {
        "schema": SCHEMA,
        "version": SCHEMA_VERSION,
        "meta": meta or {},
        "rows": [{k: _num(v) for k, v in asdict(r).items()} for r in rows],
    }
    return json.dumps(doc, indent=2)


def summary_from_json(text: str) -> list[SummaryRow]:
    doc = json.loads(text)
    if doc.get("schema") != SCHEMA:
        raise ValueError(f"not a summary document (schema {doc.get('schema')!r})")
    if doc.get("version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported summary version {doc.get('version')!r}")
    names = {f.name for f in fields(SummaryRow)}
    rows = []
    for rec in doc["rows"]:
        kw = {k: (math.nan if v is None else v) for k, v in rec.items() if k in names}
        rows.append(SummaryRow(**kw))
    return rows


def read_summary(path) -> list[SummaryRow]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return summary_from_json(text) if path.suffix == ".json" else summary_from_csv(text)


def details_to_csv(details) -> str:
    names = [f.name for f in fields(ReplicateRecord)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names + ["error"])
    for d in details:
        w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(d, n) for n in names)]
                   + [repr(d.error)])
    return buf.getvalue()


def emit_outputs(rows, out_dir, formats=("csv", "json"), stem: str = "summary", details=None,
                 meta: dict | None = None) -> list[Path]:
    """Write the summary table (and optionally per-replicate details) to ``out_dir``.

    Each file is written to a temporary sibling and renamed into place.
    Returns the written paths.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("summary table is empty")
    out_dir = Path(out_dir)
    written = []
    for fmt in formats:
        if fmt == "csv":
            written.append(_atomic_write(out_dir / f"{stem}.csv", summary_to_csv(rows)))
        elif fmt == "json":
            written.append(_atomic_write(out_dir / f"{stem}.json", summary_to_json(rows, meta)))
        else:
            raise ValueError(f"unknown output format {fmt!r}")
    if details:
        written.append(_atomic_write(out_dir / f"{stem}_replicates.csv", details_to_csv(details)))
    return written
