"""Channel saliency for detection outputs and spectra of the learned front-end filters."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .ingest.edf import CHANNEL_NAMES
from .model import ModelConfig, ModelParams, classify_logits


@dataclass
class SaliencyMap:
    importance: np.ndarray  # (channels,), max-normalised to [0, 1]
    saliency: np.ndarray  # (channels, samples), |d logit / d x|
    window_id: str
    probability: float


@dataclass
class FilterSpectrum:
    freqs: np.ndarray  # Hz
    magnitude: np.ndarray
    peak_hz: float


def input_gradient(x: np.ndarray, params: ModelParams, config: ModelConfig) -> tuple[np.ndarray, float]:
    """Gradient of the detection logit w.r.t. one (channels, samples) window, and the logit."""
    if params.cls_head is None:
        raise ValueError("checkpoint has no classification head")
    xt = Tensor(np.asarray(x, dtype=params.front_conv.weight.dtype)[None], requires_grad=True)
    logit = classify_logits(xt, params, config)
    logit.sum().backward()
    return xt.grad[0], float(logit.data[0])


def channel_saliency(window, params: ModelParams, config: ModelConfig, window_id: str = "") -> SaliencyMap:
    """Per-channel L2-over-time norm of the logit gradient, scaled so the max is 1.

    ``window`` is a :class:`~eegssm.ingest.windows.Window` or a raw
    (channels, samples) array.
    """
    data = getattr(window, "data", window)
    if not window_id and hasattr(window, "record_id"):
        window_id = f"{window.record_id}@{window.start:g}"
    grad, logit = input_gradient(data, params, config)
    sal = np.abs(grad).astype(np.float64)
    norms = np.sqrt((grad.astype(np.float64) ** 2).sum(axis=1))
    top = norms.max()
    importance = norms / top if top > 0 else np.zeros_like(norms)
    prob = float(0.5 * (1 + np.tanh(0.5 * logit)))
    return SaliencyMap(importance, sal, window_id, prob)


def filter_spectra(params: ModelParams, fs: float = 200.0, pad: int = 256) -> list[FilterSpectrum]:
    """Magnitude response of each first-layer kernel, zero-padded to ``pad`` points."""
    w = params.front_conv.weight.data.astype(np.float64)  # (F, 1, K)
    kernels = w[:, 0, :]
    with ad.no_grad():
        mag = ad.rfft_magnitude(Tensor(kernels), pad).data
    freqs = np.arange(pad // 2 + 1) * fs / pad
    out = []
    for m in mag:
        peak = int(np.argmax(m))  # lowest bin wins ties
        out.append(FilterSpectrum(freqs, m, float(freqs[peak])))
    return out


def saliency_payload(smap: SaliencyMap, channel_names=CHANNEL_NAMES) -> dict:
    return {
        "window_id": smap.window_id,
        "probability": round(smap.probability, 12),
        "channels": list(channel_names),
        "importance": [round(float(v), 12) for v in smap.importance],
    }


def export_saliency(smap: SaliencyMap, path, csv_path=None, channel_names=CHANNEL_NAMES) -> None:
    """Write the channel importances as JSON and optionally the full saliency as CSV."""
    with open(path, "w") as fh:
        json.dump(saliency_payload(smap, channel_names), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channel"] + [str(i) for i in range(smap.saliency.shape[1])])
            for name, row in zip(channel_names, smap.saliency):
                w.writerow([name] + [repr(float(v)) for v in row])


def export_filter_spectra(spectra: list[FilterSpectrum], path) -> None:
    body = {
        "freqs_hz": [float(f) for f in spectra[0].freqs] if spectra else [],
        "filters": [
            {"peak_hz": s.peak_hz, "magnitude": [float(v) for v in s.magnitude]} for s in spectra
        ],
    }
    with open(path, "w") as fh:
        json.dump(body, fh, sort_keys=True)
        fh.write("\n")
