"""U-Net style encoder/decoder with Mamba blocks, plus a detection head.

Data flow for the default configuration (B = batch)::

    (B, 19, 2000)
      front_end: shared kernel-100 filters per channel, channel mixing -> (B, 2000, 128)
      level 0:  Mamba x4 -> skip0 (128 @ 2000) -> double conv 128->256, mean pool /4
      level 1:  Mamba x4 -> skip1 (256 @ 500)  -> double conv 256->512, mean pool /4
      bottleneck: Mamba x4 -> (512 @ 125)  ----------------> classification head
      decoder 1: transpose conv 512->256 x4, concat skip1, double conv 512->256, Mamba x4
      decoder 0: transpose conv 256->128 x4, concat skip0, double conv 256->128, Mamba x4
      recon head: zero-initialised 1x1 conv 128->19 -> (B, 19, 2000)

Sequence tensors are kept as (B, T, D) for the Mamba blocks and (B, D, T)
for the convolutions.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import (
    Conv1dParams,
    ConvTranspose1dParams,
    DoubleConvParams,
    LinearParams,
    conv1d,
    conv1d_transpose,
    double_conv,
    init_conv1d,
    init_conv_transpose1d,
    init_double_conv,
    init_linear,
    linear,
    pool1d,
)
from .ssm import SsmBlockParams, dt_rank_for, init_ssm_block, mamba_stack


@dataclass
class ModelConfig:
    channels: int = 19
    window_samples: int = 2000
    front_filters: int = 8
    front_kernel: int = 100
    d_model: int = 128
    mamba_blocks_per_level: int = 4
    ssm_state: int = 16
    ssm_expand: int = 2
    ssm_conv: int = 4
    levels: int = 2
    pool_factor: int = 4
    level_dims: list[int] = field(default_factory=lambda: [128, 256, 512])
    double_conv_kernel: int = 5
    head_hidden: int = 64
    lambda_spectral: float = 1.0
    spectral_pad: int = 2048
    parallel_scan: bool = False

    def validate(self) -> None:
        if len(self.level_dims) != self.levels + 1:
            raise ValueError(
                f"level_dims has {len(self.level_dims)} entries, expected levels+1 = {self.levels + 1}"
            )
        if self.level_dims[0] != self.d_model:
            raise ValueError(f"level_dims[0]={self.level_dims[0]} must equal d_model={self.d_model}")
        if self.window_samples % self.pool_factor**self.levels:
            raise ValueError(
                f"window_samples={self.window_samples} not divisible by "
                f"pool_factor**levels={self.pool_factor ** self.levels}"
            )
        if self.double_conv_kernel % 2 == 0:
            raise ValueError("double_conv_kernel must be odd")
        if self.lambda_spectral < 0:
            raise ValueError("lambda_spectral must be >= 0")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EncoderLevel:
    blocks: list[SsmBlockParams]
    down: DoubleConvParams


@dataclass
class DecoderLevel:
    up: ConvTranspose1dParams
    conv: DoubleConvParams
    blocks: list[SsmBlockParams]


@dataclass
class ClsHead:
    hidden: LinearParams
    out: LinearParams


@dataclass
class ModelParams:
    front_conv: Conv1dParams
    channel_mix: LinearParams
    encoder: list[EncoderLevel]
    bottleneck: list[SsmBlockParams]
    decoder: list[DecoderLevel]  # decoder[i] restores level i
    recon_head: Conv1dParams
    cls_head: ClsHead


def init_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    config.validate()
    rng = np.random.default_rng(seed)
    c = config

    def blocks(dim):
        return [
            init_ssm_block(rng, dim, c.ssm_state, c.ssm_expand, c.ssm_conv, dtype=dtype)
            for _ in range(c.mamba_blocks_per_level)
        ]

    dims = c.level_dims
    front = init_conv1d(rng, 1, c.front_filters, c.front_kernel,
                        padding=c.front_kernel // 2, dtype=dtype)
    mix = init_linear(rng, c.channels * c.front_filters, c.d_model, dtype=dtype)
    encoder = [
        EncoderLevel(blocks(dims[i]), init_double_conv(rng, dims[i], dims[i + 1],
                                                       c.double_conv_kernel, dtype))
        for i in range(c.levels)
    ]
    bottleneck = blocks(dims[-1])
    decoder = [
        DecoderLevel(
            init_conv_transpose1d(rng, dims[i + 1], dims[i], c.pool_factor,
                                  stride=c.pool_factor, dtype=dtype),
            init_double_conv(rng, 2 * dims[i], dims[i], c.double_conv_kernel, dtype),
            blocks(dims[i]),
        )
        for i in range(c.levels)
    ]
    recon = init_conv1d(rng, c.d_model, c.channels, 1, dtype=dtype)
    recon.weight.data[...] = 0
    recon.bias.data[...] = 0
    head = ClsHead(init_linear(rng, dims[-1], c.head_hidden, dtype=dtype),
                   init_linear(rng, c.head_hidden, 1, dtype=dtype))
    return ModelParams(front, mix, encoder, bottleneck, decoder, recon, head)


# -- parameter bookkeeping ------------------------------------------------------------
def named_parameters(obj, prefix: str = "") -> list[tuple[str, Tensor]]:
    """Flatten nested parameter dataclasses/lists into (dotted name, tensor) pairs."""
    out: list[tuple[str, Tensor]] = []
    if isinstance(obj, Tensor):
        return [(prefix, obj)]
    if isinstance(obj, list):
        for i, item in enumerate(obj):
            out += named_parameters(item, f"{prefix}.{i}" if prefix else str(i))
        return out
    if is_dataclass(obj):
        for f in fields(obj):
            v = getattr(obj, f.name)
            if v is None:
                continue
            if isinstance(v, (Tensor, list)) or is_dataclass(v):
                out += named_parameters(v, f"{prefix}.{f.name}" if prefix else f.name)
    return out


def parameters(obj) -> list[Tensor]:
    return [t for _, t in named_parameters(obj)]


def ssm_block_param_count(d_model: int, d_state: int, expand: int = 2, d_conv: int = 4) -> int:
    d_in = expand * d_model
    r = dt_rank_for(d_model)
    return (
        (d_model + 1) * 2 * d_in  # in_proj
        + d_in * (d_conv + 1)  # depthwise conv
        + d_in * d_state  # A_log
        + (d_in + 1) * 2 * d_state  # x_to_BC
        + d_in * r  # dt_down
        + (r + 1) * d_in  # dt_up
        + d_in  # D_skip
        + (d_in + 1) * d_model  # out_proj
        + 2 * d_model  # norm
    )


def parameter_count(config: ModelConfig) -> int:
    """Closed-form learnable parameter count for ``config``.

    front conv F*(K+1); channel mix (C*F+1)*d_model; per level i with widths
    w_i -> w_{i+1}: k SSM blocks at w_i twice (encoder and decoder), a down
    double conv (w_i*5+1)*w_{i+1} + (w_{i+1}*5+1)*w_{i+1}, a transpose conv
    w_{i+1}*w_i*p + w_i, and an up double conv (2*w_i*5+1)*w_i + (w_i*5+1)*w_i;
    k bottleneck blocks; recon head (d_model+1)*C; head (w_L+1)*H + H + 1.
    """
    c = config
    k = c.double_conv_kernel
    blk = lambda d: ssm_block_param_count(d, c.ssm_state, c.ssm_expand, c.ssm_conv)  # noqa: E731
    n = c.front_filters * (c.front_kernel + 1)
    n += (c.channels * c.front_filters + 1) * c.d_model
    w = c.level_dims
    for i in range(c.levels):
        n += 2 * c.mamba_blocks_per_level * blk(w[i])
        n += (w[i] * k + 1) * w[i + 1] + (w[i + 1] * k + 1) * w[i + 1]
        n += w[i + 1] * w[i] * c.pool_factor + w[i]
        n += (2 * w[i] * k + 1) * w[i] + (w[i] * k + 1) * w[i]
    n += c.mamba_blocks_per_level * blk(w[-1])
    n += (c.d_model + 1) * c.channels
    n += (w[-1] + 1) * c.head_hidden + c.head_hidden + 1
    return n


# -- forward passes -------------------------------------------------------------------
def _check_input(x: Tensor, config: ModelConfig) -> None:
    expected = (config.channels, config.window_samples)
    if x.ndim != 3 or tuple(x.shape[1:]) != expected:
        raise ValueError(
            f"expected input of shape (B, {expected[0]}, {expected[1]}), got {tuple(x.shape)}"
        )


def _to_btd(x: Tensor) -> Tensor:
    return ad.transpose(x, (0, 2, 1))


def front_end(x: Tensor, params: ModelParams, config: ModelConfig) -> Tensor:
    """Shared temporal filters on every channel, then a per-step channel-mixing map.

    Returns (B, T, d_model).
    """
    _check_input(x, config)
    b, c, t = x.shape
    f = params.front_conv.out_channels
    y = conv1d(x.reshape(b * c, 1, t), params.front_conv)  # (B*C, F, T + 1) for even kernels
    y = y[:, :, :t] if y.shape[2] != t else y
    y = y.reshape(b, c * f, t)
    return linear(_to_btd(y), params.channel_mix)


def _encode(x, params, config):
    h = front_end(x, params, config)  # (B, T, D)
    skips = []
    for lvl in params.encoder:
        h = mamba_stack(h, lvl.blocks, config.parallel_scan)
        hc = _to_btd(h)  # (B, D, T)
        skips.append(hc)
        h = _to_btd(pool1d(double_conv(hc, lvl.down), config.pool_factor, "mean"))
    h = mamba_stack(h, params.bottleneck, config.parallel_scan)
    return _to_btd(h), skips


def encode(x: Tensor, params: ModelParams, config: ModelConfig):
    """Return ``(bottleneck, skips)``: bottleneck is (B, level_dims[-1], T / pool**levels)
    and skips[i] is the level-i Mamba output in (B, D_i, T_i) layout."""
    return _encode(x, params, config)


def decode(bottleneck: Tensor, skips: list[Tensor], params: ModelParams,
           config: ModelConfig) -> Tensor:
    h = bottleneck  # (B, D, T)
    for i in reversed(range(config.levels)):
        lvl = params.decoder[i]
        up = conv1d_transpose(h, lvl.up)
        h = double_conv(ad.concat([up, skips[i]], axis=1), lvl.conv)
        h = _to_btd(mamba_stack(_to_btd(h), lvl.blocks, config.parallel_scan))
    return conv1d(h, params.recon_head)


def reconstruct(x: Tensor, params: ModelParams, config: ModelConfig) -> Tensor:
    bottleneck, skips = _encode(x, params, config)
    return decode(bottleneck, skips, params, config)


def classify_logits(x: Tensor, params: ModelParams, config: ModelConfig) -> Tensor:
    """Pre-sigmoid detection score, shape (B,)."""
    bottleneck, _ = _encode(x, params, config)
    pooled = bottleneck.max(axis=2)  # (B, D)
    hidden = ad.silu(linear(pooled, params.cls_head.hidden))
    return linear(hidden, params.cls_head.out).reshape(-1)


def classify(x: Tensor, params: ModelParams, config: ModelConfig) -> Tensor:
    """Seizure probability per window, shape (B,)."""
    return ad.sigmoid(classify_logits(x, params, config))


# -- checkpoints ----------------------------------------------------------------------
CHECKPOINT_MAGIC = b"ESCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParams, config: ModelConfig, extra: dict | None = None) -> None:
    """Config header (key-sorted JSON) followed by named tensors; written atomically."""
    header = {"model": json.loads(config.to_json())}
    if extra:
        header["extra"] = extra
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    named = named_parameters(params)
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)))
    buf.write(hbytes)
    buf.write(struct.pack("<I", len(named)))
    for name, t in named:
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        ad.save_tensor(buf, t)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        return _parse_checkpoint(io.BytesIO(raw), path)
    except (EOFError, struct.error, UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise ValueError(f"{path}: truncated or corrupt checkpoint ({exc})") from None


def _parse_checkpoint(fh, path):
    read = ad._read_exact
    if fh.read(4) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", read(fh, 8))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(read(fh, hlen))
    config = ModelConfig.from_dict(header["model"])
    (count,) = struct.unpack("<I", read(fh, 4))
    stored = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", read(fh, 4))
        name = read(fh, nlen).decode()
        stored[name] = ad.load_tensor(fh)
    dtype = next(iter(stored.values())).dtype if stored else np.float32
    params = init_model(config, dtype=dtype)
    named = dict(named_parameters(params))
    if set(named) != set(stored):
        missing = sorted(set(named) - set(stored))
        extra = sorted(set(stored) - set(named))
        raise ValueError(f"{path}: parameter mismatch, missing={missing[:5]} unexpected={extra[:5]}")
    for name, t in named.items():
        if t.shape != stored[name].shape:
            raise ValueError(f"{path}: {name} has shape {stored[name].shape}, expected {t.shape}")
        t.data = stored[name].copy()
    return params, config, header.get("extra", {})


def reduced_config(**overrides) -> ModelConfig:
    """Small configuration for tests and desk-scale runs."""
    base = dict(
        front_filters=2, front_kernel=100, d_model=16, mamba_blocks_per_level=1,
        ssm_state=8, levels=2, pool_factor=4, level_dims=[16, 24, 32], head_hidden=16,
    )
    base.update(overrides)
    cfg = ModelConfig(**base)
    cfg.validate()
    return cfg

