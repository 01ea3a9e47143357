"""Training objectives, the Adam optimizer and AUROC."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class LossConfig:
    lambda_spectral: float = 1.0
    spectral_pad: int = 2048
    spectral_scale: float | None = None  # defaults to 1 / spectral_pad

    def __post_init__(self):
        if self.lambda_spectral < 0:
            raise ValueError("lambda_spectral must be >= 0")
        if self.spectral_scale is None:
            self.spectral_scale = 1.0 / self.spectral_pad


def _same_shape(name, pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise ValueError(f"{name}: prediction shape {pred.shape} != target shape {target.shape}")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _same_shape("mse_loss", pred, target)
    d = pred - target
    return (d * d).mean()


def spectral_loss(pred: Tensor, target: Tensor, pad: int = 2048, scale: float | None = None) -> Tensor:
    """Mean over leading axes of the MSE between scaled magnitude spectra.

    Both signals are zero-padded along the last axis to ``pad`` samples; the
    target spectrum is treated as a constant.
    """
    _same_shape("spectral_loss", pred, target)
    scale = 1.0 / pad if scale is None else scale
    mp = ad.rfft_magnitude(pred, pad) * scale
    with ad.no_grad():
        mt = ad.rfft_magnitude(Tensor(target.data), pad).data * scale
    d = mp - Tensor(mt.astype(mp.dtype, copy=False))
    return (d * d).mean()


def combined_recon_loss(pred: Tensor, target: Tensor, cfg: LossConfig | None = None):
    """Return ``(total, mse, spectral)``; total = mse + lambda * spectral."""
    cfg = cfg or LossConfig()
    mse = mse_loss(pred, target)
    if cfg.lambda_spectral == 0:
        with ad.no_grad():
            spec = spectral_loss(pred, target, cfg.spectral_pad, cfg.spectral_scale)
        return mse, mse, spec
    spec = spectral_loss(pred, target, cfg.spectral_pad, cfg.spectral_scale)
    return mse + spec * cfg.lambda_spectral, mse, spec


def bce_loss(prob: Tensor, label, eps: float = 1e-7) -> Tensor:
    """-mean(y log p + (1 - y) log(1 - p)) with p clamped to [eps, 1 - eps]."""
    y = np.asarray(label.data if isinstance(label, Tensor) else label, dtype=prob.dtype)
    if y.shape != prob.shape:
        raise ValueError(f"bce_loss: labels {y.shape} vs probabilities {prob.shape}")
    lo, hi = eps, 1 - eps
    inside = (prob.data > lo) & (prob.data < hi)
    # clamp without killing the gradient inside the open interval
    p = ad.where(inside, prob, Tensor(np.clip(prob.data, lo, hi)))
    terms = Tensor(y) * ad.log(p) + Tensor(1 - y) * ad.log(1 - p)
    return -terms.mean()


def bce_with_logits(logit: Tensor, label) -> Tensor:
    """BCE on sigmoid(logit), computed as softplus(z) - y z for stability."""
    y = np.asarray(label.data if isinstance(label, Tensor) else label, dtype=logit.dtype)
    return (ad.softplus(logit) - logit * Tensor(y)).mean()


# -- optimizer -----------------------------------------------------------------------
@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[Tensor], state: AdamState, grads: list | None = None) -> AdamState:
    """Bias-corrected Adam update applied in place to ``params``.

    ``grads`` defaults to each parameter's ``.grad``; ``None`` entries are
    treated as zero.
    """
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    grads = grads if grads is not None else [p.grad for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
    return state


# -- metrics -------------------------------------------------------------------------
def auroc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank sum.

    Ties get average ranks, which counts tied positive/negative pairs as 1/2.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"auroc: {s.size} scores vs {y.size} labels")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise ValueError("auroc: labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc is undefined: need at least one positive and one negative")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(s.size, dtype=np.float64)
    # average rank over each run of equal scores
    boundaries = np.flatnonzero(np.diff(sorted_s)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [s.size]])
    avg = (starts + ends + 1) / 2.0  # mean of 1-based ranks starts+1 .. ends
    ranks[order] = np.repeat(avg, ends - starts)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def metric_line(step: int, **values) -> str:
    """One JSON-lines record; ``None`` values are omitted."""
    rec = {"step": int(step)}
    for k, v in values.items():
        if v is None:
            continue
        rec[k] = float(v) if isinstance(v, (float, np.floating)) else v
    return json.dumps(rec, sort_keys=True)
