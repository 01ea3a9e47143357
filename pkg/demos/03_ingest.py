"""Write a tiny synthetic EDF corpus, preprocess it to 10 s windows and inspect the result."""

import tempfile
from pathlib import Path

import numpy as np

from eegssm.ingest import load_manifest, load_split_windows, preprocess_manifest, synth_corpus

root = Path(tempfile.mkdtemp())
synth_corpus(root / "raw", train_patients=2, test_patients=1, seed=3, duration=60.0,
             seizure_seconds=(10.0, 20.0))
manifest = preprocess_manifest(load_manifest(root / "raw" / "manifest.json"), root / "pre")
for split in ("train", "test"):
    windows = load_split_windows(manifest, split)
    labels = [w.label for w in windows]
    print(f"{split}: {len(windows)} windows, {sum(labels)} seizure, shape {windows[0].data.shape}")
w = load_split_windows(manifest, "train")[0]
print("per-channel mean/std after z-scoring:",
      float(np.abs(w.data.mean(1)).max()), float(w.data.std(1).mean()))
print("artifacts under", root)
