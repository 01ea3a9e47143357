"""Synthetic EEG corpus for desk-scale runs.

Background activity is a handful of latent sources (sums of sines with a
1/f amplitude profile) projected onto 19 channels through a lead field that
is shared by every recording of a corpus, plus small independent noise and
60/120 Hz line interference.  Seizures add high-amplitude 15-25 Hz bursts
under a smooth envelope.  Recordings are written as EDF with TUSZ-style
``csv_bi`` annotation files and a manifest.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .annotations import AnnotationEvent, write_annotations_csv
from .edf import CHANNEL_NAMES, write_edf
from .manifest import RecordEntry, RecordManifest, save_manifest


def _sources(rng, n_src: int, t: np.ndarray, n_sines: int = 12) -> np.ndarray:
    out = np.zeros((n_src, t.size))
    for k in range(n_src):
        freqs = rng.uniform(1.0, 40.0, n_sines)
        amps = 1.0 / freqs
        phases = rng.uniform(0, 2 * np.pi, n_sines)
        for f, a, ph in zip(freqs, amps, phases):
            out[k] += a * np.sin(2 * np.pi * f * t + ph)
        out[k] /= out[k].std()
    return out


def _burst(rng, t: np.ndarray, start: float, stop: float) -> np.ndarray:
    env = np.zeros_like(t)
    inside = (t >= start) & (t < stop)
    ramp = min(2.0, (stop - start) / 4)
    rise = np.clip((t - start) / ramp, 0, 1)
    fall = np.clip((stop - t) / ramp, 0, 1)
    env[inside] = (np.sin(0.5 * np.pi * np.minimum(rise, fall)) ** 2)[inside]
    sig = np.zeros_like(t)
    for f in rng.uniform(15.0, 25.0, 3):
        sig += np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return env * sig


def synth_recording(rng: np.random.Generator, duration: float = 120.0, fs: float = 256.0,
                    n_seizures: int = 1, n_sources: int = 6, noise: float = 0.05,
                    burst_gain: float = 4.0, seizure_seconds=(20.0, 40.0), mixing=None):
    """Return ``(signals_uV, events)`` for one recording.

    ``mixing`` is the (19, n_sources) lead field; a fresh one is drawn when omitted.
    """
    t = np.arange(int(round(duration * fs))) / fs
    if mixing is None:
        mixing = rng.normal(size=(len(CHANNEL_NAMES), n_sources))
    n_sources = mixing.shape[1]
    x = mixing @ _sources(rng, n_sources, t)
    x /= x.std(axis=1, keepdims=True)
    x += noise * rng.normal(size=x.shape)
    events = []
    for _ in range(n_seizures):
        length = rng.uniform(*seizure_seconds)
        start = rng.uniform(0, max(duration - length, 0.0))
        spatial = rng.uniform(0.5, 1.0, size=(len(CHANNEL_NAMES), 1))
        x += burst_gain * spatial * _burst(rng, t, start, start + length)
        events.append(AnnotationEvent(round(start, 4), round(start + length, 4), "seizure"))
    x += 0.5 * np.sin(2 * np.pi * 60.0 * t) + 0.2 * np.sin(2 * np.pi * 120.0 * t)
    return 25.0 * x, sorted(events, key=lambda e: e.start)


def synth_corpus(out_dir, train_patients: int = 4, test_patients: int = 2, seed: int = 0,
                 records_per_patient: int = 1, duration: float = 120.0, fs: float = 256.0,
                 seizures_per_record: int = 1, seizure_seconds=(20.0, 40.0)) -> RecordManifest:
    """Write a patient-disjoint EDF + CSV corpus and ``manifest.json`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lead_field = rng.normal(size=(len(CHANNEL_NAMES), 6))
    labels = [f"EEG {c.upper()}-REF" for c in CHANNEL_NAMES]
    entries = []
    n_total = train_patients + test_patients
    for p in range(n_total):
        patient = f"p{p:03d}"
        split = "train" if p < train_patients else "test"
        for s in range(records_per_patient):
            rid = f"{patient}_s{s:03d}"
            x, events = synth_recording(rng, duration, fs, seizures_per_record,
                                        seizure_seconds=seizure_seconds, mixing=lead_field)
            edf_name = f"{rid}.edf"
            csv_name = f"{rid}.csv_bi"
            write_edf(out_dir / edf_name, x, fs, labels, patient_id=patient, recording_id=rid)
            write_annotations_csv(out_dir / csv_name, events, duration)
            entries.append(RecordEntry(rid, edf_name, csv_name, split, patient))
    manifest = RecordManifest(entries, out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
