"""Channel saliency of one window and spectra of the first-layer filters."""

import tempfile
from pathlib import Path

import numpy as np

from eegssm.ingest.edf import CHANNEL_NAMES
from eegssm.interpret import channel_saliency, export_saliency, filter_spectra
from eegssm.model import init_model, reduced_config

cfg = reduced_config()
params = init_model(cfg, seed=0)
t = np.arange(cfg.front_kernel)
params.front_conv.weight.data[0, 0] = np.cos(2 * np.pi * 10 * t / 200)  # a 10 Hz kernel
for i, spec in enumerate(filter_spectra(params)):
    print(f"filter {i}: peak at {spec.peak_hz:.2f} Hz")

x = np.random.default_rng(0).normal(size=(19, 2000)).astype(np.float32)
smap = channel_saliency(x, params, cfg, window_id="noise")
top = np.argsort(smap.importance)[::-1][:5]
print("most important channels:", [(CHANNEL_NAMES[i], round(float(smap.importance[i]), 3)) for i in top])
out = Path(tempfile.mkdtemp()) / "saliency.json"
export_saliency(smap, out)
print("wrote", out)
