"""Differentiable layers: 1-D convolutions, linear, layer norm, pooling.

Layers are plain functions over parameter dataclasses so the same parameters
can be shared by several forward paths (reconstruction and classification).
Convolutions are single graph nodes with hand-written adjoints; the rest are
composed from :mod:`eegssm.autodiff` primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import Tensor, make_node


@dataclass
class Conv1dParams:
    weight: Tensor  # (out_channels, in_channels // groups, kernel)
    bias: Tensor | None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]


@dataclass
class ConvTranspose1dParams:
    weight: Tensor  # (in_channels, out_channels, kernel)
    bias: Tensor | None
    stride: int = 1
    padding: int = 0


@dataclass
class LinearParams:
    weight: Tensor  # (out, in)
    bias: Tensor | None


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5


@dataclass
class DoubleConvParams:
    conv1: Conv1dParams
    conv2: Conv1dParams


# -- initialisation ------------------------------------------------------------
def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    # torch's default: kaiming_uniform_(a=sqrt(5)) -> bound = 1/sqrt(fan_in)
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def init_conv1d(rng, in_ch, out_ch, kernel, *, stride=1, padding=0, groups=1,
                bias=True, dtype=np.float32) -> Conv1dParams:
    if in_ch % groups or out_ch % groups:
        raise ValueError(f"conv1d: channels ({in_ch}, {out_ch}) not divisible by groups={groups}")
    if kernel < 1:
        raise ValueError("conv1d: kernel must be >= 1")
    w = _kaiming_uniform(rng, (out_ch, in_ch // groups, kernel), (in_ch // groups) * kernel, dtype)
    b = _zeros((out_ch,), dtype) if bias else None
    return Conv1dParams(w, b, stride, padding, groups)


def init_conv_transpose1d(rng, in_ch, out_ch, kernel, *, stride=1, padding=0,
                          dtype=np.float32) -> ConvTranspose1dParams:
    w = _kaiming_uniform(rng, (in_ch, out_ch, kernel), out_ch * kernel, dtype)
    return ConvTranspose1dParams(w, _zeros((out_ch,), dtype), stride, padding)


def init_linear(rng, in_features, out_features, *, bias=True, dtype=np.float32) -> LinearParams:
    w = _kaiming_uniform(rng, (out_features, in_features), in_features, dtype)
    return LinearParams(w, _zeros((out_features,), dtype) if bias else None)


def init_layer_norm(dim, eps=1e-5, dtype=np.float32) -> LayerNormParams:
    return LayerNormParams(
        Tensor(np.ones(dim, dtype=dtype), requires_grad=True), _zeros((dim,), dtype), eps
    )


def init_double_conv(rng, in_ch, out_ch, kernel=5, dtype=np.float32) -> DoubleConvParams:
    pad = (kernel - 1) // 2
    return DoubleConvParams(
        init_conv1d(rng, in_ch, out_ch, kernel, padding=pad, dtype=dtype),
        init_conv1d(rng, out_ch, out_ch, kernel, padding=pad, dtype=dtype),
    )


# -- convolution kernels (plain ndarray) -----------------------------------------
def _conv_forward(xp: np.ndarray, w: np.ndarray, stride: int, groups: int) -> np.ndarray:
    """Cross-correlate an already padded (B, Cin, Tp) input."""
    bsz, cin, _ = xp.shape
    cout, cin_g, k = w.shape
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]  # (B, Cin, Tout, K)
    tout = win.shape[2]
    if groups == 1:
        return np.einsum("bctk,ock->bot", win, w, optimize=True)
    if cin_g == 1 and cout == cin:
        return np.einsum("bctk,ck->bct", win, w[:, 0, :], optimize=True)
    win = win.reshape(bsz, groups, cin_g, tout, k)
    wg = w.reshape(groups, cout // groups, cin_g, k)
    return np.einsum("bgctk,gock->bgot", win, wg, optimize=True).reshape(bsz, cout, tout)


def _conv_input_grad(g: np.ndarray, w: np.ndarray, stride: int, groups: int,
                     padded_len: int) -> np.ndarray:
    """Adjoint of :func:`_conv_forward` with respect to the padded input."""
    bsz, cout, tout = g.shape
    _, cin_g, k = w.shape
    cin = cin_g * groups
    if groups == 1:
        cols = np.einsum("bot,ock->bctk", g, w, optimize=True)
    elif cin_g == 1 and cout == cin:
        cols = g[..., None] * w[:, 0, None, :]
    else:
        gg = g.reshape(bsz, groups, cout // groups, tout)
        wg = w.reshape(groups, cout // groups, cin_g, k)
        cols = np.einsum("bgot,gock->bgctk", gg, wg, optimize=True).reshape(bsz, cin, tout, k)
    out = np.zeros((bsz, cin, padded_len), dtype=g.dtype)
    span = stride * (tout - 1) + 1
    for j in range(k):
        out[:, :, j : j + span : stride] += cols[:, :, :, j]
    return out


def _conv_weight_grad(xp: np.ndarray, g: np.ndarray, k: int, stride: int,
                      groups: int, cin_g: int) -> np.ndarray:
    bsz, cin, _ = xp.shape
    cout, tout = g.shape[1], g.shape[2]
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    if groups == 1:
        return np.einsum("bot,bctk->ock", g, win, optimize=True)
    if cin_g == 1 and cout == cin:
        return np.einsum("bct,bctk->ck", g, win, optimize=True)[:, None, :]
    win = win.reshape(bsz, groups, cin_g, tout, k)
    gg = g.reshape(bsz, groups, cout // groups, tout)
    return np.einsum("bgot,bgctk->gock", gg, win, optimize=True).reshape(cout, cin_g, k)


# -- layers ------------------------------------------------------------------
def conv1d(x: Tensor, p: Conv1dParams) -> Tensor:
    """Strided, zero-padded, grouped 1-D cross-correlation over (B, Cin, T)."""
    w = p.weight
    if x.ndim != 3:
        raise ValueError(f"conv1d: expected (B, C, T) input, got shape {x.shape}")
    cout, cin_g, k = w.shape
    cin = x.shape[1]
    if cin != cin_g * p.groups:
        raise ValueError(
            f"conv1d: input has {cin} channels but weight {w.shape} with groups={p.groups} "
            f"expects {cin_g * p.groups}"
        )
    t = x.shape[2]
    if t + 2 * p.padding < k:
        raise ValueError(f"conv1d: input length {t} + 2*{p.padding} is shorter than kernel {k}")
    pad = p.padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    out = _conv_forward(xp, w.data, p.stride, p.groups)
    if p.bias is not None:
        out = out + p.bias.data[:, None]
    tp = xp.shape[2]

    def vjp(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = _conv_input_grad(g, w.data, p.stride, p.groups, tp)
            gx = gxp[:, :, pad : pad + t] if pad else gxp
        if w.requires_grad:
            gw = _conv_weight_grad(xp, g, k, p.stride, p.groups, cin_g)
        if p.bias is not None and p.bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, w) + ((p.bias,) if p.bias is not None else ())
    return make_node(np.ascontiguousarray(out, dtype=x.dtype), parents, vjp, "conv1d")


def conv1d_transpose(x: Tensor, p: ConvTranspose1dParams) -> Tensor:
    """Transposed 1-D convolution; the adjoint of :func:`conv1d` with the same weight.

    Output length is ``(T - 1) * stride - 2 * padding + kernel``.
    """
    w = p.weight
    if x.ndim != 3:
        raise ValueError(f"conv1d_transpose: expected (B, C, T) input, got shape {x.shape}")
    cin, cout, k = w.shape
    if x.shape[1] != cin:
        raise ValueError(
            f"conv1d_transpose: input has {x.shape[1]} channels, weight {w.shape} expects {cin}"
        )
    t = x.shape[2]
    full_len = (t - 1) * p.stride + k
    t_out = full_len - 2 * p.padding
    if t_out < 1:
        raise ValueError(f"conv1d_transpose: non-positive output length {t_out}")
    # conv1d weight layout (out=cin, in=cout, k) is exactly this weight
    full = _conv_input_grad(x.data, w.data, p.stride, 1, full_len)
    out = full[:, :, p.padding : p.padding + t_out]
    if p.bias is not None:
        out = out + p.bias.data[:, None]

    def vjp(g):
        gfull = np.zeros((g.shape[0], cout, full_len), dtype=g.dtype)
        gfull[:, :, p.padding : p.padding + t_out] = g
        gx = _conv_forward(gfull, w.data, p.stride, 1) if x.requires_grad else None
        gw = _conv_weight_grad(gfull, x.data, k, p.stride, 1, cout) if w.requires_grad else None
        gb = g.sum(axis=(0, 2)) if p.bias is not None and p.bias.requires_grad else None
        return gx, gw, gb

    parents = (x, w) + ((p.bias,) if p.bias is not None else ())
    return make_node(np.ascontiguousarray(out, dtype=x.dtype), parents, vjp, "conv1d_transpose")


def linear(x: Tensor, p: LinearParams) -> Tensor:
    """y = x W^T + b over the last axis."""
    if x.shape[-1] != p.weight.shape[1]:
        raise ValueError(
            f"linear: input feature size {x.shape[-1]} != weight in-features {p.weight.shape[1]}"
        )
    if x.ndim == 1:
        y = (x.reshape(1, -1) @ ad.transpose(p.weight)).reshape(-1)
    else:
        y = x @ ad.transpose(p.weight)
    if p.bias is not None:
        y = y + p.bias
    return y


def layer_norm(x: Tensor, p: LayerNormParams) -> Tensor:
    """Standardize over the last axis (population variance), then scale and shift."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc * ((var + p.eps) ** -0.5) * p.gamma + p.beta


def pool1d(x: Tensor, factor: int, mode: str = "mean") -> Tensor:
    """Non-overlapping pooling of (B, C, T) along T."""
    b, c, t = x.shape
    if t % factor:
        raise ValueError(f"pool1d: length {t} is not divisible by factor {factor}")
    blocks = x.reshape(b, c, t // factor, factor)
    if mode == "mean":
        return blocks.mean(axis=-1)
    if mode == "max":
        return blocks.max(axis=-1)
    raise ValueError(f"pool1d: unknown mode {mode!r}")


def double_conv(x: Tensor, p: DoubleConvParams) -> Tensor:
    return ad.silu(conv1d(ad.silu(conv1d(x, p.conv1)), p.conv2))
