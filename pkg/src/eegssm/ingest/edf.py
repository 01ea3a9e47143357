"""European Data Format (EDF) reading and writing.

Only plain EDF signal data is handled: a 256-byte ASCII header, 256 bytes of
per-signal header fields, then data records of little-endian int16 samples.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError

STANDARD_CHANNELS = (
    "FP1", "FP2", "F3", "F4", "C3", "C4", "P3", "P4", "O1", "O2",
    "F7", "F8", "T3", "T4", "T5", "T6", "FZ", "CZ", "PZ",
)
CHANNEL_NAMES = (
    "Fp1", "Fp2", "F3", "F4", "C3", "C4", "P3", "P4", "O1", "O2",
    "F7", "F8", "T3", "T4", "T5", "T6", "Fz", "Cz", "Pz",
)


class EdfError(DataError):
    pass


class EdfHeaderError(EdfError):
    pass


class EdfTruncatedError(EdfError):
    pass


class EdfNoSignalsError(EdfError):
    pass


@dataclass
class RawRecording:
    signals: list[np.ndarray]  # physical units, one array per channel
    rates: list[float]  # Hz, per channel
    labels: list[str]
    patient_id: str = ""
    session_id: str = ""
    units: list[str] = field(default_factory=list)

    @property
    def fs(self) -> float:
        if not self.rates or any(r != self.rates[0] for r in self.rates):
            raise DataError(f"channels do not share one sampling rate: {sorted(set(self.rates))}")
        return self.rates[0]

    def matrix(self) -> np.ndarray:
        """(channels, samples) array; requires one rate and equal lengths."""
        _ = self.fs
        lengths = {len(s) for s in self.signals}
        if len(lengths) != 1:
            raise DataError(f"channels have different lengths: {sorted(lengths)}")
        return np.stack(self.signals)


def normalize_label(label: str) -> str:
    """'EEG FP1-REF' -> 'FP1'; case-insensitive, strips reference suffixes."""
    s = label.strip().upper()
    if s.startswith("EEG "):
        s = s[4:].strip()
    for suffix in ("-REF", "-LE", "-AR", "-AVG"):
        if s.endswith(suffix):
            s = s[: -len(suffix)]
    return s.strip()


def select_channels(rec: RawRecording, channels=STANDARD_CHANNELS) -> RawRecording:
    """Return the recording restricted to ``channels`` in that order."""
    index = {}
    for i, lab in enumerate(rec.labels):
        index.setdefault(normalize_label(lab), i)
    missing = [c for c in channels if c.upper() not in index]
    if missing:
        raise DataError(f"recording lacks channels {missing}; has {rec.labels}")
    idx = [index[c.upper()] for c in channels]
    out = RawRecording(
        [rec.signals[i] for i in idx], [rec.rates[i] for i in idx],
        [rec.labels[i] for i in idx], rec.patient_id, rec.session_id,
        [rec.units[i] for i in idx] if rec.units else [],
    )
    _ = out.fs
    return out


def _field(buf: bytes, name: str, conv):
    text = buf.decode("ascii", errors="replace").strip()
    try:
        return conv(text)
    except ValueError:
        raise EdfHeaderError(f"EDF header field {name!r} has invalid value {text!r}") from None


def parse_edf(path) -> RawRecording:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 256:
        raise EdfHeaderError(f"{path}: file shorter than the 256-byte EDF header")
    version = raw[0:8].decode("ascii", errors="replace").strip()
    if version != "0":
        raise EdfHeaderError(f"{path}: unsupported EDF version field {version!r}")
    patient = raw[8:88].decode("ascii", errors="replace").strip()
    recording = raw[88:168].decode("ascii", errors="replace").strip()
    header_bytes = _field(raw[184:192], "header bytes", int)
    n_records = _field(raw[236:244], "number of data records", int)
    duration = _field(raw[244:252], "record duration", float)
    ns = _field(raw[252:256], "number of signals", int)
    if ns <= 0:
        raise EdfNoSignalsError(f"{path}: EDF declares {ns} signals")
    if header_bytes != 256 * (ns + 1):
        raise EdfHeaderError(
            f"{path}: header size {header_bytes} inconsistent with {ns} signals"
        )
    if len(raw) < header_bytes:
        raise EdfHeaderError(f"{path}: signal headers truncated")
    if n_records < 0 or duration <= 0:
        raise EdfHeaderError(f"{path}: bad record count {n_records} or duration {duration}")

    pos = 256

    def column(width, name, conv):
        nonlocal pos
        vals = [_field(raw[pos + i * width : pos + (i + 1) * width], name, conv) for i in range(ns)]
        pos += width * ns
        return vals

    labels = column(16, "label", str)
    column(80, "transducer", str)
    units = column(8, "physical dimension", str)
    pmin = np.array(column(8, "physical minimum", float))
    pmax = np.array(column(8, "physical maximum", float))
    dmin = np.array(column(8, "digital minimum", int), dtype=np.float64)
    dmax = np.array(column(8, "digital maximum", int), dtype=np.float64)
    column(80, "prefiltering", str)
    spr = np.array(column(8, "samples per record", int))
    if np.any(dmax <= dmin):
        raise EdfHeaderError(f"{path}: digital maximum must exceed digital minimum")
    if np.any(spr <= 0):
        raise EdfHeaderError(f"{path}: non-positive samples per record")

    record_samples = int(spr.sum())
    need = header_bytes + 2 * record_samples * n_records
    if len(raw) < need:
        raise EdfTruncatedError(
            f"{path}: expected {n_records} records ({need} bytes), file has {len(raw)} bytes"
        )
    data = np.frombuffer(raw, dtype="<i2", count=record_samples * n_records, offset=header_bytes)
    data = data.reshape(n_records, record_samples)
    offsets = np.concatenate([[0], np.cumsum(spr)])
    gain = (pmax - pmin) / (dmax - dmin)
    signals = []
    for i in range(ns):
        digital = data[:, offsets[i] : offsets[i + 1]].reshape(-1).astype(np.float64)
        signals.append((digital - dmin[i]) * gain[i] + pmin[i])
    rates = [float(n) / duration for n in spr]
    return RawRecording(signals, rates, labels, patient, recording, units)


def _ascii(value, width: int) -> bytes:
    text = str(value)
    if len(text) > width:
        raise ValueError(f"EDF field {text!r} exceeds {width} characters")
    return text.ljust(width).encode("ascii")


def _num(value: float, width: int = 8) -> str:
    text = f"{value:g}" if not float(value).is_integer() else str(int(value))
    if len(text) > width:
        text = f"{value:.{max(width - 6, 1)}g}"
    return text[:width]


def write_edf(path, signals, fs: float, labels, *, patient_id: str = "X", recording_id: str = "X",
              phys_range: tuple[float, float] | None = None, record_seconds: float = 1.0,
              units: str = "uV") -> None:
    """Write equal-rate signals (channels x samples, physical units) as EDF.

    Samples are quantised to int16 over ``phys_range`` (default: the data range
    per channel).  Trailing samples that do not fill a data record are dropped.
    """
    x = np.asarray(signals, dtype=np.float64)
    ns, n = x.shape
    spr = int(round(fs * record_seconds))
    if spr <= 0 or abs(spr - fs * record_seconds) > 1e-9:
        raise ValueError("fs * record_seconds must be a positive integer")
    n_records = n // spr
    x = x[:, : n_records * spr]
    dmin, dmax = -32768, 32767
    if phys_range is None:
        # whole numbers always fit the 8-character fields and bracket the data
        pmin = np.floor(x.min(axis=1))
        pmax = np.ceil(x.max(axis=1))
    else:
        pmin = np.full(ns, float(phys_range[0]))
        pmax = np.full(ns, float(phys_range[1]))
    pmin = np.array([float(_num(v)) for v in pmin])
    pmax = np.array([float(_num(v)) for v in pmax])
    pmax = np.where(pmax > pmin, pmax, pmin + 1.0)
    gain = (pmax - pmin) / (dmax - dmin)
    digital = np.round((x - pmin[:, None]) / gain[:, None] + dmin)
    digital = np.clip(digital, dmin, dmax).astype("<i2")

    hdr = bytearray()
    hdr += _ascii("0", 8)
    hdr += _ascii(patient_id, 80)
    hdr += _ascii(recording_id, 80)
    hdr += _ascii("01.01.01", 8)
    hdr += _ascii("00.00.00", 8)
    hdr += _ascii(256 * (ns + 1), 8)
    hdr += _ascii("", 44)
    hdr += _ascii(n_records, 8)
    hdr += _ascii(_num(record_seconds), 8)
    hdr += _ascii(ns, 4)
    for lab in labels:
        hdr += _ascii(lab, 16)
    hdr += b"".join(_ascii("AgAgCl electrode", 80) for _ in range(ns))
    hdr += b"".join(_ascii(units, 8) for _ in range(ns))
    hdr += b"".join(_ascii(_num(v), 8) for v in pmin)
    hdr += b"".join(_ascii(_num(v), 8) for v in pmax)
    hdr += b"".join(_ascii(dmin, 8) for _ in range(ns))
    hdr += b"".join(_ascii(dmax, 8) for _ in range(ns))
    hdr += b"".join(_ascii("", 80) for _ in range(ns))
    hdr += b"".join(_ascii(spr, 8) for _ in range(ns))
    hdr += b"".join(_ascii("", 32) for _ in range(ns))
    # records: (n_records, ns, spr)
    body = digital.reshape(ns, n_records, spr).transpose(1, 0, 2).tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(body)
    os.replace(tmp, path)
