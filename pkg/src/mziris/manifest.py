"""Image manifests: the CSV ingestion format and its record type.

A manifest is a UTF-8 CSV with a header row:

    subject_id,eye,session_date,path,mask_path,overall_quality

plus an optional trailing ``twin_group`` column for twin test sets.
``eye`` is L or R, ``session_date`` is ISO-8601, ``mask_path`` and
``overall_quality`` may be empty. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

from .errors import ConfigError

if TYPE_CHECKING:
    from .quality import QualityReport

MANIFEST_COLUMNS = ["subject_id", "eye", "session_date", "path", "mask_path", "overall_quality"]


@dataclass
class ImageRecord:
    """One iris image plus its subject/eye/session metadata."""

    subject_id: str
    eye: str  # "L" or "R"
    session_date: date
    path: str
    mask_path: str | None = None
    overall_quality: int | None = None
    quality: "QualityReport | None" = field(default=None, repr=False)
    twin_group: str | None = None

    def __post_init__(self) -> None:
        if self.eye not in ("L", "R"):
            raise ConfigError(f"eye must be L or R, got {self.eye!r}")

    def overall(self) -> int | None:
        """Overall quality score, preferring an attached full report."""
        if self.quality is not None:
            return self.quality.overall
        return self.overall_quality


def read_manifest(path: str | Path) -> list[ImageRecord]:
    """Read a manifest CSV into records, enforcing (subject_id, path) uniqueness."""
    path = Path(path)
    records: list[ImageRecord] = []
    seen: set[tuple[str, str]] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        rows = (line for line in fh if not line.startswith("#"))
        reader = csv.DictReader(rows)
        if reader.fieldnames is None:
            return records
        missing = [c for c in MANIFEST_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ConfigError(f"manifest {path} is missing columns: {missing}")
        for lineno, row in enumerate(reader, start=2):
            overall = row.get("overall_quality") or None
            rec = ImageRecord(
                subject_id=row["subject_id"],
                eye=row["eye"],
                session_date=date.fromisoformat(row["session_date"]),
                path=row["path"],
                mask_path=row.get("mask_path") or None,
                overall_quality=int(overall) if overall is not None else None,
                twin_group=row.get("twin_group") or None,
            )
            key = (rec.subject_id, rec.path)
            if key in seen:
                raise ConfigError(f"duplicate (subject_id, path) at {path}:{lineno}: {key}")
            seen.add(key)
            records.append(rec)
    return records


def write_manifest(path: str | Path, records: Iterable[ImageRecord]) -> None:
    """Write records as a manifest CSV (atomic: temp file then rename)."""
    records = list(records)
    columns = list(MANIFEST_COLUMNS)
    if any(r.twin_group for r in records):
        columns.append("twin_group")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for r in records:
            row = [
                r.subject_id,
                r.eye,
                r.session_date.isoformat(),
                r.path,
                r.mask_path or "",
                "" if r.overall() is None else str(r.overall()),
            ]
            if "twin_group" in columns:
                row.append(r.twin_group or "")
            writer.writerow(row)
    os.replace(tmp, path)
