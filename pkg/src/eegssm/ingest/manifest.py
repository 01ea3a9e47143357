"""Recording manifests and the preprocessing chain that turns them into window caches."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError
from .annotations import parse_annotations_csv
from .dsp import POWERLINE_FREQS, notch_filter, resample
from .edf import parse_edf, select_channels
from .windows import FS, Window, cache_windows, load_cache, make_windows

MANIFEST_VERSION = 1


@dataclass
class RecordEntry:
    id: str
    raw: str
    annotations: str
    split: str  # "train" or "test"
    patient: str
    cache: str | None = None


@dataclass
class RecordManifest:
    records: list[RecordEntry] = field(default_factory=list)
    root: Path = field(default=Path("."), repr=False, compare=False)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def split(self, name: str) -> list[RecordEntry]:
        return [r for r in self.records if r.split == name]

    def patients(self, split: str) -> list[str]:
        return sorted({r.patient for r in self.records if r.split == split})

    def check_disjoint(self) -> None:
        shared = set(self.patients("train")) & set(self.patients("test"))
        if shared:
            raise DataError(f"patients appear in both train and test splits: {sorted(shared)}")

    def to_json(self) -> str:
        body = {"version": MANIFEST_VERSION, "records": [asdict(r) for r in self.records]}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


def load_manifest(path) -> RecordManifest:
    path = Path(path)
    try:
        body = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"manifest {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from None
    if body.get("version") != MANIFEST_VERSION:
        raise DataError(f"manifest {path}: unsupported version {body.get('version')}")
    try:
        records = [RecordEntry(**r) for r in body["records"]]
    except (KeyError, TypeError) as exc:
        raise DataError(f"manifest {path}: malformed record entry ({exc})") from None
    for r in records:
        if r.split not in ("train", "test"):
            raise DataError(f"manifest {path}: record {r.id} has split {r.split!r}")
    m = RecordManifest(records, path.parent)
    m.check_disjoint()
    return m


def save_manifest(manifest: RecordManifest, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(manifest.to_json())
    os.replace(tmp, path)


def preprocess_signals(rec, fs_out: float = FS) -> np.ndarray:
    """Channel selection, notch (at the native rate), resample; returns (19, n) at fs_out.

    Powerline notches are applied before resampling because 120 Hz is only
    representable while the native Nyquist exceeds it.
    """
    rec = select_channels(rec)
    fs = rec.fs
    x = rec.matrix()
    freqs = [f for f in POWERLINE_FREQS if f < fs / 2]
    if freqs:
        x = notch_filter(x, fs, freqs)
    if fs != fs_out:
        x = resample(x, fs, fs_out)
    return x


def preprocess_record(manifest: RecordManifest, entry: RecordEntry) -> list[Window]:
    rec = parse_edf(manifest.resolve(entry.raw))
    events = parse_annotations_csv(manifest.resolve(entry.annotations)) if entry.annotations else []
    x = preprocess_signals(rec)
    return make_windows(x, events, entry.id)


def worker_threads() -> int:
    try:
        return max(1, int(os.environ.get("EEG_SSM_THREADS", "1")))
    except ValueError:
        return 1


def preprocess_manifest(manifest: RecordManifest, out_dir, threads: int | None = None) -> RecordManifest:
    """Build one window cache per record under ``out_dir``; returns the updated manifest.

    Records are independent, so they may be processed on worker threads; the
    output manifest keeps input order regardless.
    """
    manifest.check_disjoint()
    out_dir = Path(out_dir)
    (out_dir / "caches").mkdir(parents=True, exist_ok=True)

    def one(entry: RecordEntry) -> RecordEntry:
        windows = preprocess_record(manifest, entry)
        rel = f"caches/{entry.id}.ewin"
        cache_windows(windows, out_dir / rel)
        raw = os.path.relpath(manifest.resolve(entry.raw), out_dir)
        ann = os.path.relpath(manifest.resolve(entry.annotations), out_dir) if entry.annotations else ""
        return RecordEntry(entry.id, raw, ann, entry.split, entry.patient, rel)

    threads = threads or worker_threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            entries = list(pool.map(one, manifest.records))
    else:
        entries = [one(e) for e in manifest.records]
    out = RecordManifest(entries, out_dir)
    save_manifest(out, out_dir / "manifest.json")
    return out


def load_split_windows(manifest: RecordManifest, split: str,
                       patients: list[str] | None = None) -> list[Window]:
    """All cached windows of ``split`` (optionally restricted to ``patients``), in manifest order."""
    windows = []
    for r in manifest.split(split):
        if patients is not None and r.patient not in patients:
            continue
        if not r.cache:
            raise DataError(f"record {r.id} has no window cache; run preprocessing first")
        windows.extend(load_cache(manifest.resolve(r.cache)))
    return windows
