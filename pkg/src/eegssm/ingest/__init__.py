"""EEG ingestion: EDF/CSV parsing, resampling, notch filtering, windowing, caches."""

from .annotations import AnnotationEvent, parse_annotations_csv, write_annotations_csv
from .dsp import notch_filter, resample
from .edf import CHANNEL_NAMES, STANDARD_CHANNELS, RawRecording, parse_edf, select_channels, write_edf
from .manifest import (
    RecordEntry,
    RecordManifest,
    load_manifest,
    load_split_windows,
    preprocess_manifest,
    save_manifest,
)
from .synth import synth_corpus
from .windows import Window, cache_windows, load_cache, make_windows
