"""Fixed-length labelled windows and their binary cache."""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .annotations import AnnotationEvent

WINDOW_SECONDS = 10.0
FS = 200.0
N_CHANNELS = 19
N_SAMPLES = 2000

CACHE_MAGIC = b"EWIN"
CACHE_VERSION = 1


@dataclass
class Window:
    data: np.ndarray  # (19, 2000) float32, z-scored per channel
    label: int
    record_id: str
    start: float  # seconds from record start


class CacheError(DataError):
    pass


class CacheMagicError(CacheError):
    pass


class CacheVersionError(CacheError):
    pass


class CacheTruncatedError(CacheError):
    pass


def window_labels(n_windows: int, events, window_seconds: float = WINDOW_SECONDS) -> np.ndarray:
    """1 where a seizure event overlaps [k*w, (k+1)*w) with positive length."""
    labels = np.zeros(n_windows, dtype=np.uint8)
    if n_windows == 0:
        return labels
    lo = np.arange(n_windows) * window_seconds
    hi = lo + window_seconds
    for ev in events:
        if not ev.is_seizure:
            continue
        overlap = np.minimum(hi, ev.stop) - np.maximum(lo, ev.start)
        labels[overlap > 0] = 1
    return labels


def zscore(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    return (x - mu) / (sd + eps)


def make_windows(signals: np.ndarray, events: list[AnnotationEvent], record_id: str = "",
                 fs: float = FS, window_seconds: float = WINDOW_SECONDS) -> list[Window]:
    """Cut a (channels, samples) recording at ``fs`` into non-overlapping windows.

    The trailing partial window is dropped; a record shorter than one window
    yields an empty list.
    """
    x = np.asarray(signals, dtype=np.float64)
    per = int(round(fs * window_seconds))
    n_win = x.shape[1] // per
    labels = window_labels(n_win, events, window_seconds)
    out = []
    for k in range(n_win):
        seg = zscore(x[:, k * per : (k + 1) * per]).astype(np.float32)
        out.append(Window(seg, int(labels[k]), record_id, k * window_seconds))
    return out


def cache_bytes(windows: list[Window]) -> bytes:
    buf = io.BytesIO()
    buf.write(CACHE_MAGIC)
    buf.write(struct.pack("<II", CACHE_VERSION, len(windows)))
    for w in windows:
        data = np.ascontiguousarray(w.data, dtype="<f4")
        if data.shape != (N_CHANNELS, N_SAMPLES):
            raise ValueError(f"window data must be {(N_CHANNELS, N_SAMPLES)}, got {data.shape}")
        rid = w.record_id.encode()
        buf.write(struct.pack("<BI", int(w.label), len(rid)))
        buf.write(rid)
        buf.write(struct.pack("<d", float(w.start)))
        buf.write(data.tobytes())
    return buf.getvalue()


def cache_windows(windows: list[Window], path) -> None:
    """Write windows to ``path`` (via a temporary file and atomic rename)."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(cache_bytes(windows))
    os.replace(tmp, path)


def _take(buf: memoryview, pos: int, n: int, path) -> tuple[bytes, int]:
    if pos + n > len(buf):
        raise CacheTruncatedError(f"{path}: cache truncated at byte {len(buf)} (needed {pos + n})")
    return bytes(buf[pos : pos + n]), pos + n


def load_cache(path) -> list[Window]:
    with open(path, "rb") as fh:
        buf = memoryview(fh.read())
    raw, pos = _take(buf, 0, 4, path)
    if raw != CACHE_MAGIC:
        raise CacheMagicError(f"{path}: not a window cache (magic {raw!r})")
    raw, pos = _take(buf, pos, 8, path)
    version, count = struct.unpack("<II", raw)
    if version != CACHE_VERSION:
        raise CacheVersionError(f"{path}: unsupported cache version {version}")
    nbytes = N_CHANNELS * N_SAMPLES * 4
    out = []
    for _ in range(count):
        raw, pos = _take(buf, pos, 5, path)
        label, rlen = struct.unpack("<BI", raw)
        rid, pos = _take(buf, pos, rlen, path)
        raw, pos = _take(buf, pos, 8, path)
        (start,) = struct.unpack("<d", raw)
        raw, pos = _take(buf, pos, nbytes, path)
        data = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(N_CHANNELS, N_SAMPLES)
        out.append(Window(data, int(label), rid.decode(), start))
    if pos != len(buf):
        raise CacheError(f"{path}: {len(buf) - pos} trailing bytes after {count} windows")
    return out
