"""Seizure annotation files.

Two layouts are accepted, both comma separated with ``#`` comment lines:

* TUSZ ``csv_bi`` term files: ``channel,start_time,stop_time,label,confidence``
* a generic three-column ``start,stop,label`` file

A header row (first field non-numeric in the time column) is skipped.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from ..errors import DataError


@dataclass(frozen=True)
class AnnotationEvent:
    start: float
    stop: float
    label: str  # "seizure" or "background"

    @property
    def is_seizure(self) -> bool:
        return self.label == "seizure"


class AnnotationError(DataError):
    pass


def _canonical(label: str) -> str:
    return "seizure" if "seiz" in label.strip().lower() else "background"


def _time(text: str, lineno: int, path) -> float:
    try:
        return float(text)
    except ValueError:
        raise AnnotationError(f"{path}:{lineno}: non-numeric time {text!r}") from None


def parse_annotations_csv(path, seizures_only: bool = True) -> list[AnnotationEvent]:
    """Read annotation events in file order (overlaps are kept as-is)."""
    events: list[AnnotationEvent] = []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    for lineno, row in enumerate(rows, start=1):
        row = [c.strip() for c in row]
        if not row or not any(row) or row[0].startswith("#"):
            continue
        chan = "TERM"
        if len(row) >= 5:
            chan, start_s, stop_s, label = row[:4]
        elif len(row) == 3:
            start_s, stop_s, label = row
        else:
            raise AnnotationError(f"{path}:{lineno}: expected 3 or 5 columns, got {len(row)}")
        if start_s.lower() in ("start_time", "start"):
            continue
        if len(row) >= 5 and chan.upper() != "TERM":
            continue  # per-channel rows; only whole-record terms label windows
        start = _time(start_s, lineno, path)
        stop = _time(stop_s, lineno, path)
        if not 0 <= start < stop:
            raise AnnotationError(f"{path}:{lineno}: need 0 <= start < stop, got {start}, {stop}")
        ev = AnnotationEvent(start, stop, _canonical(label))
        if seizures_only and not ev.is_seizure:
            continue
        events.append(ev)
    return events


def write_annotations_csv(path, events, duration: float | None = None) -> None:
    """Write events in the TUSZ csv_bi layout (whole-record ``TERM`` channel)."""
    with open(path, "w", newline="") as fh:
        fh.write("# version = csv_v1.0.0\n")
        if duration is not None:
            fh.write(f"# duration = {duration:.4f} secs\n")
        fh.write("#\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "start_time", "stop_time", "label", "confidence"])
        for ev in events:
            lab = "seiz" if ev.is_seizure else "bckg"
            w.writerow(["TERM", f"{ev.start:.4f}", f"{ev.stop:.4f}", lab, "1.0000"])
