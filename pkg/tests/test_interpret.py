import json

import numpy as np
import pytest

from eegssm import interpret as I
from eegssm import model as M
from eegssm.autodiff import Tensor, no_grad
from eegssm.ingest.edf import CHANNEL_NAMES
from eegssm.ingest.windows import Window
from test_model import perturb, tiny_config


@pytest.fixture
def tiny():
    cfg = tiny_config()
    params = M.init_model(cfg, seed=8, dtype=np.float64)
    perturb(params, seed=3)
    return cfg, params


def window(cfg, seed=0):
    return np.random.default_rng(seed).normal(size=(cfg.channels, cfg.window_samples))


def test_channel_without_mixing_weights_has_zero_importance(tiny):
    cfg, params = tiny
    c, F = 5, cfg.front_filters
    params.channel_mix.weight.data[:, c * F : (c + 1) * F] = 0.0
    smap = I.channel_saliency(window(cfg), params, cfg)
    assert smap.importance[c] == 0.0
    assert not np.any(smap.saliency[c])
    assert smap.importance.max() == 1.0 and np.all((smap.importance >= 0) & (smap.importance <= 1))


def test_input_gradient_matches_finite_differences(tiny):
    cfg, params = tiny
    x = window(cfg, seed=4)
    grad, logit = I.input_gradient(x, params, cfg)

    def f(arr):
        with no_grad():
            return float(M.classify_logits(Tensor(arr[None]), params, cfg).data[0])

    assert logit == pytest.approx(f(x), abs=1e-12)
    rng = np.random.default_rng(0)
    h, worst = 1e-5, 0.0
    for _ in range(25):
        i, j = rng.integers(cfg.channels), rng.integers(cfg.window_samples)
        xp, xm = x.copy(), x.copy()
        xp[i, j] += h
        xm[i, j] -= h
        fd = (f(xp) - f(xm)) / (2 * h)
        worst = max(worst, abs(fd - grad[i, j]) / max(abs(fd), abs(grad[i, j]), 1e-8))
    assert worst < 1e-3


def test_probability_and_window_id(tiny):
    cfg, params = tiny
    w = Window(window(cfg).astype(np.float64), 1, "rec7", 30.0)
    smap = I.channel_saliency(w, params, cfg)
    assert smap.window_id == "rec7@30"
    with no_grad():
        p = M.classify(Tensor(w.data[None]), params, cfg).data[0]
    assert smap.probability == pytest.approx(p, abs=1e-12)


def test_zero_gradient_gives_zero_importances(tiny):
    cfg, params = tiny
    params.cls_head.out.weight.data[...] = 0.0
    smap = I.channel_saliency(window(cfg), params, cfg)
    assert not np.any(smap.importance)


def test_missing_head_rejected(tiny):
    cfg, params = tiny
    params.cls_head = None
    with pytest.raises(ValueError, match="head"):
        I.channel_saliency(window(cfg), params, cfg)


def _with_kernels(kernels):
    params = M.init_model(M.reduced_config(front_filters=len(kernels)))
    params.front_conv.weight.data[:, 0, :] = np.asarray(kernels, dtype=np.float32)
    return params


def test_filter_spectra_constructed_kernels():
    t = np.arange(100)
    cos10 = np.cos(2 * np.pi * 10 * t / 200)
    impulse = np.zeros(100)
    impulse[0] = 1.0
    const = np.ones(100)
    spectra = I.filter_spectra(_with_kernels([cos10, impulse, const]))
    bin_w = 200 / 256
    assert abs(spectra[0].peak_hz - 10.0) <= bin_w
    flat = spectra[1].magnitude
    assert flat.max() / flat.min() < 1.01
    assert spectra[2].peak_hz == 0.0
    for s in spectra:
        assert s.freqs[-1] == 100.0 and len(s.freqs) == 129
        assert 0 <= s.peak_hz <= 100


def test_filter_spectra_pure():
    params = _with_kernels(np.random.default_rng(1).normal(size=(2, 100)))
    before = params.front_conv.weight.data.copy()
    a = I.filter_spectra(params)
    b = I.filter_spectra(params)
    assert all(np.array_equal(x.magnitude, y.magnitude) for x, y in zip(a, b))
    np.testing.assert_array_equal(params.front_conv.weight.data, before)


def test_export_saliency_round_trip(tiny, tmp_path):
    cfg, params = tiny
    smap = I.channel_saliency(window(cfg), params, cfg, window_id="w0")
    js, csv_path = tmp_path / "s.json", tmp_path / "s.csv"
    I.export_saliency(smap, js, csv_path)
    body = json.loads(js.read_text())
    assert body["channels"] == list(CHANNEL_NAMES)
    assert body["window_id"] == "w0"
    np.testing.assert_allclose(body["importance"], smap.importance, atol=1e-11)
    assert body["probability"] == pytest.approx(smap.probability, abs=1e-11)
    rows = csv_path.read_text().splitlines()
    assert len(rows) == 20 and [r.split(",")[0] for r in rows[1:]] == list(CHANNEL_NAMES)
    back = np.array([[float(v) for v in r.split(",")[1:]] for r in rows[1:]])
    np.testing.assert_array_equal(back, smap.saliency)

    first = js.read_bytes()
    I.export_saliency(smap, js)
    assert js.read_bytes() == first


def test_export_filter_spectra(tmp_path):
    spectra = I.filter_spectra(_with_kernels(np.eye(2, 100)))
    path = tmp_path / "f.json"
    I.export_filter_spectra(spectra, path)
    body = json.loads(path.read_text())
    assert len(body["filters"]) == 2 and len(body["freqs_hz"]) == 129
    assert body["filters"][0]["peak_hz"] == spectra[0].peak_hz
