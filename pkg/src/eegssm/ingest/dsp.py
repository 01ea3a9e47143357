"""Resampling and powerline notch filtering."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy import signal


def resample_filter(up: int, down: int, fs_in: float, fs_out: float, beta: float = 8.6,
                    cutoff_ratio: float = 0.9) -> np.ndarray:
    """Kaiser-windowed sinc low-pass at the upsampled rate ``fs_in * up``.

    Cutoff is ``cutoff_ratio * min(fs_in, fs_out) / 2``; the length follows
    Kaiser's estimate for the stopband implied by ``beta`` with the transition
    band ending at ``min(fs_in, fs_out) / 2``.  Taps sum to one.
    """
    fs_up = fs_in * up
    nyq = min(fs_in, fs_out) / 2
    fc = cutoff_ratio * nyq
    atten = beta / 0.1102 + 8.7  # invert beta = 0.1102 (A - 8.7)
    width = 2 * np.pi * (nyq - fc) / fs_up
    half = max(int(math.ceil((atten - 8) / (2.285 * width) / 2)), 2 * max(up, down))
    n = np.arange(-half, half + 1)
    h = 2 * fc / fs_up * np.sinc(2 * fc / fs_up * n) * np.kaiser(2 * half + 1, beta)
    return h / h.sum()


def resample(x, fs_in: float, fs_out: float = 200.0, axis: int = -1) -> np.ndarray:
    """Rational polyphase resampling to ``fs_out``; output length floor(n * fs_out / fs_in)."""
    if fs_in <= 0 or fs_out <= 0:
        raise ValueError(f"sampling rates must be positive, got {fs_in} -> {fs_out}")
    x = np.asarray(x, dtype=np.float64)
    ratio = Fraction(fs_out).limit_denominator(10**6) / Fraction(fs_in).limit_denominator(10**6)
    up, down = ratio.numerator, ratio.denominator
    n_in = x.shape[axis]
    n_out = (n_in * up) // down
    if up == down:
        return x.copy()
    h = resample_filter(up, down, fs_in, fs_out)
    # odd-reflect the ends so the filter sees a continued signal, not zeros;
    # pad by a multiple of ``down`` so output samples stay on the input grid
    need = min(len(h) // (2 * up) + 1, n_in - 1)
    pad = down * math.ceil(need / down) if need > 0 else 0
    if pad >= n_in:
        pad = 0
    if pad:
        widths = [(0, 0)] * x.ndim
        widths[axis] = (pad, pad)
        x = np.pad(x, widths, mode="reflect", reflect_type="odd")
    y = signal.resample_poly(x, up, down, axis=axis, window=h)
    offset = pad * up // down
    return np.take(y, np.arange(offset, offset + n_out), axis=axis)


def notch_sos(fs: float = 200.0, freqs=(60.0,), q: float = 30.0) -> np.ndarray:
    """Second-order sections of a cascade of biquad notches."""
    sections = []
    for f0 in freqs:
        if not 0 < f0 < fs / 2:
            raise ValueError(f"notch frequency {f0} Hz must lie in (0, {fs / 2}) for fs={fs}")
        b, a = signal.iirnotch(f0, q, fs=fs)
        sections.append(np.concatenate([b, a]))
    return np.array(sections)


POWERLINE_FREQS = (60.0, 120.0)


def notch_filter(x, fs: float = 200.0, freqs=(60.0,), q: float = 30.0,
                 axis: int = -1) -> np.ndarray:
    """Zero-phase (forward-backward) notch cascade; frequencies must be below Nyquist."""
    sos = notch_sos(fs, freqs, q)
    return signal.sosfiltfilt(sos, np.asarray(x, dtype=np.float64), axis=axis)
