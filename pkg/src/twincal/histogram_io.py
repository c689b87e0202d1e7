"""Sparse CSV count tables and JSON calibration reports.

File formats
------------
Histogram CSV: header ``cs,ci,count``, one row per nonzero cell, UTF-8,
LF or CRLF line endings.  Dark-count CSV is identical except for the
header ``ds,di,count``.  Reports are a single JSON document whose numeric
fields round-trip bit-exactly through :func:`write_report` /
:func:`load_report`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DuplicateEntry, EmptyHistogram, ParseError

_HIST_HEADER = ("cs", "ci", "count")
_DARK_HEADER = ("ds", "di", "count")


@dataclass(frozen=True)
class PhotocountHistogram:
    """Joint photocount table: (c_s, c_i) -> number of frames with that outcome.

    ``shots`` is the total number of frames and must equal the sum of all
    entry counts.  Coordinates are nonnegative integers, counts positive.
    """

    entries: dict[tuple[int, int], int]
    shots: int
    label: str = ""

    def __post_init__(self):
        if not self.entries:
            raise EmptyHistogram("count table has no entries")
        total = 0
        for (a, b), count in self.entries.items():
            if a < 0 or b < 0 or int(a) != a or int(b) != b:
                raise ValueError(f"coordinates must be nonnegative integers, got ({a}, {b})")
            if count <= 0 or int(count) != count:
                raise ValueError(f"cell ({a}, {b}) has nonpositive count {count}")
            total += count
        if total != self.shots:
            raise ValueError(f"sum of counts {total} does not match shots {self.shots}")

    @property
    def max_counts(self) -> tuple[int, int]:
        """Largest observed count on each arm."""
        return (max(a for a, _ in self.entries), max(b for _, b in self.entries))

    def frequencies(self) -> Iterator[tuple[int, int, float]]:
        """Yield (c_s, c_i, count/shots) over the support."""
        for (a, b), count in self.entries.items():
            yield a, b, count / self.shots

    def to_dense(self, shape: tuple[int, int] | None = None) -> np.ndarray:
        """Dense frequency matrix over ``shape`` (default: bounding box)."""
        if shape is None:
            ms, mi = self.max_counts
            shape = (ms + 1, mi + 1)
        out = np.zeros(shape)
        for (a, b), count in self.entries.items():
            if a < shape[0] and b < shape[1]:
                out[a, b] = count / self.shots
        return out


class DarkCountRecord(PhotocountHistogram):
    """Joint dark-count table, same shape and invariants as a histogram."""


def _load_table(path: str | Path, header: tuple[str, str, str]) -> dict[tuple[int, int], int]:
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file, expected header '{','.join(header)}'")
    head = tuple(tok.strip().lower() for tok in lines[0].split(","))
    if head != header:
        raise ParseError(f"{path}: bad header {lines[0]!r}, expected '{','.join(header)}'")
    entries: dict[tuple[int, int], int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue  # blank line, not a data row
        tokens = line.split(",")
        if len(tokens) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(tokens)}")
        try:
            a, b, count = (int(tok.strip()) for tok in tokens)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-integer field in {line!r}") from None
        if a < 0 or b < 0:
            raise ParseError(f"{path}:{lineno}: negative coordinate ({a}, {b})")
        if count <= 0:
            raise ParseError(f"{path}:{lineno}: count must be positive, got {count}")
        if (a, b) in entries:
            raise DuplicateEntry(f"{path}:{lineno}: duplicate cell ({a}, {b})")
        entries[(a, b)] = count
    if not entries:
        raise EmptyHistogram(f"{path}: no data rows")
    return entries


def load_histogram(path: str | Path, label: str = "") -> PhotocountHistogram:
    """Load and validate a photocount histogram CSV.

    Raises FileNotFoundError for a missing file, ParseError for malformed
    rows, DuplicateEntry for repeated cells, EmptyHistogram when no data
    rows are present.  Every row either becomes an entry or aborts the
    load; nothing is dropped silently.
    """
    entries = _load_table(path, _HIST_HEADER)
    return PhotocountHistogram(entries, sum(entries.values()), label or str(path))


def load_dark_record(path: str | Path, label: str = "") -> DarkCountRecord:
    """Load and validate a dark-count record CSV (same contract as histograms)."""
    entries = _load_table(path, _DARK_HEADER)
    return DarkCountRecord(entries, sum(entries.values()), label or str(path))


def _write_table(table: PhotocountHistogram, path: str | Path, header: tuple[str, str, str]) -> None:
    path = Path(path)
    rows = [f"{a},{b},{count}" for (a, b), count in sorted(table.entries.items())]
    path.write_text(",".join(header) + "\n" + "\n".join(rows) + "\n", encoding="utf-8")


def write_histogram(hist: PhotocountHistogram, path: str | Path) -> None:
    """Write a histogram in the sparse CSV format (rows sorted by cell)."""
    _write_table(hist, path, _HIST_HEADER)


def write_dark_record(record: DarkCountRecord, path: str | Path) -> None:
    """Write a dark record in the sparse CSV format (rows sorted by cell)."""
    _write_table(record, path, _DARK_HEADER)


def product_dark(signal: DarkCountRecord, idler: DarkCountRecord) -> DarkCountRecord:
    """Combine two independently monitored dark records into a joint one.

    The signal record is marginalized over its second coordinate and the
    idler record over its first; the joint table is their exact product,
    with ``shots = shots_s * shots_i``.
    """
    marg_s: dict[int, int] = {}
    for (a, _), count in signal.entries.items():
        marg_s[a] = marg_s.get(a, 0) + count
    marg_i: dict[int, int] = {}
    for (_, b), count in idler.entries.items():
        marg_i[b] = marg_i.get(b, 0) + count
    entries = {
        (a, b): ca * cb
        for a, ca in marg_s.items()
        for b, cb in marg_i.items()
    }
    return DarkCountRecord(entries, signal.shots * idler.shots,
                           label=f"product({signal.label},{idler.label})")


def sha256_of(path: str | Path) -> str:
    """Hex SHA-256 of a file's bytes, for traceable reports."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_report(result, path: str | Path) -> None:
    """Serialize a calibration result (or a prebuilt report dict) as JSON.

    The document is self-describing: fitted values, field parameters,
    baseline estimators, status, input checksums and the effective
    configuration.  Reloading reproduces every numeric field bit-exactly.
    """
    doc = result if isinstance(result, dict) else result.to_report()
    text = json.dumps(doc, indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_report(path: str | Path) -> dict:
    """Load a JSON calibration report."""
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
