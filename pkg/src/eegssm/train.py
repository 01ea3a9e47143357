"""Two-stage training: reconstruction pretraining, then seizure-detection fine-tuning."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, NumericalError
from .ingest.manifest import RecordManifest, load_split_windows
from .losses import AdamState, LossConfig, adam_step, auroc, bce_loss, combined_recon_loss, metric_line
from .model import (
    ModelConfig,
    ModelParams,
    classify,
    init_model,
    load_checkpoint,
    named_parameters,
    parameters,
    reconstruct,
    save_checkpoint,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 16
    steps: int = 1000
    lr: float = 1e-3
    lambda_spectral: float = 1.0
    mask_channels_prob: float = 0.0
    freeze_encoder: bool = False
    from_scratch: bool = False
    eval_every: int = 50
    patience: int = 10
    val_fraction: float = 0.1
    balance_classes: bool = True
    lr_decay_every: int = 0  # 0 disables step decay
    lr_decay_gamma: float = 0.5
    ablate_spectral: bool = False  # pretraining: also run lambda_spectral = 0
    compare_from_scratch: bool = False  # fine-tuning: also run the from-scratch arm

    def validate(self) -> None:
        if not 0 <= self.mask_channels_prob < 1:
            raise ConfigError(f"mask_channels_prob must be in [0, 1), got {self.mask_channels_prob}")
        if self.batch_size < 1 or self.steps < 0 or self.eval_every < 1:
            raise ConfigError("batch_size and eval_every must be >= 1 and steps >= 0")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.lambda_spectral < 0:
            raise ConfigError("lambda_spectral must be >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class RunReport:
    kind: str  # "pretrain", "finetune" or "evaluate"
    final: dict = field(default_factory=dict)
    auroc: float | None = None
    metrics: list[dict] = field(default_factory=list)
    checkpoint: str | None = None
    config: dict = field(default_factory=dict)
    arms: dict = field(default_factory=dict)  # arm name -> summary, for comparison runs

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


# -- data helpers -------------------------------------------------------------------
def mask_channels(x: np.ndarray, prob: float, rng: np.random.Generator) -> np.ndarray:
    """Zero each channel of each (B, C, T) example with probability ``prob``.

    Masks that would drop every channel of an example are redrawn.
    """
    if not 0 <= prob < 1:
        raise ValueError(f"mask probability must be in [0, 1), got {prob}")
    if prob == 0:
        return x
    b, c = x.shape[:2]
    keep = rng.random((b, c)) >= prob
    dead = ~keep.any(axis=1)
    while dead.any():
        keep[dead] = rng.random((int(dead.sum()), c)) >= prob
        dead = ~keep.any(axis=1)
    return x * keep[:, :, None].astype(x.dtype)


def split_patients(manifest: RecordManifest, val_fraction: float, seed: int):
    """Patient-disjoint (train, validation) patient lists drawn from the train split.

    With too few patients for a non-empty validation share, validation reuses
    the training patients.
    """
    pats = manifest.patients("train")
    n_val = int(round(val_fraction * len(pats)))
    if n_val == 0 or n_val >= len(pats):
        return pats, pats
    rng = np.random.default_rng(seed)
    val = sorted(rng.choice(pats, n_val, replace=False).tolist())
    train = [p for p in pats if p not in val]
    return train, val


def _stack(windows) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([w.data for w in windows]).astype(np.float32)
    y = np.array([w.label for w in windows], dtype=np.float32)
    return x, y


def _load_data(manifest: RecordManifest, cfg: TrainConfig):
    manifest.check_disjoint()
    train_p, val_p = split_patients(manifest, cfg.val_fraction, cfg.seed)
    train = load_split_windows(manifest, "train", train_p)
    if not train:
        raise DataError("training split has no windows")
    val = train if val_p == train_p else load_split_windows(manifest, "train", val_p)
    return _stack(train), _stack(val)


class _Batcher:
    """Seeded index stream: shuffled epochs, or class-balanced draws."""

    def __init__(self, labels: np.ndarray, batch: int, rng: np.random.Generator, balanced: bool):
        self.labels = labels
        self.batch = batch
        self.rng = rng
        self.balanced = balanced and labels.min() != labels.max()
        self._order = np.empty(0, dtype=np.int64)

    def next(self) -> np.ndarray:
        if self.balanced:
            pos = np.flatnonzero(self.labels == 1)
            neg = np.flatnonzero(self.labels == 0)
            n_pos = self.batch // 2
            idx = np.concatenate([
                self.rng.choice(pos, n_pos, replace=True),
                self.rng.choice(neg, self.batch - n_pos, replace=True),
            ])
            return self.rng.permutation(idx)
        while self._order.size < self.batch:
            self._order = np.concatenate([self._order, self.rng.permutation(self.labels.size)])
        idx, self._order = self._order[: self.batch], self._order[self.batch :]
        return idx


def _batches(n: int, size: int):
    for i in range(0, n, size):
        yield slice(i, min(i + size, n))


def _check_finite(value: float, step: int, what: str) -> None:
    if not math.isfinite(value):
        raise NumericalError(f"{what} became non-finite at step {step}", step=step)


def recon_losses(params: ModelParams, config: ModelConfig, x: np.ndarray, loss_cfg: LossConfig,
                 batch: int = 8) -> dict:
    """Window-averaged reconstruction losses over ``x`` without recording a graph."""
    totals = {"loss_mse": 0.0, "loss_spec": 0.0, "loss_total": 0.0}
    with ad.no_grad():
        for sl in _batches(len(x), batch):
            xb = Tensor(x[sl])
            total, mse, spec = combined_recon_loss(reconstruct(xb, params, config), xb, loss_cfg)
            n = sl.stop - sl.start
            totals["loss_mse"] += mse.item() * n
            totals["loss_spec"] += spec.item() * n
            totals["loss_total"] += total.item() * n
    return {k: v / len(x) for k, v in totals.items()}


def predict_proba(params: ModelParams, config: ModelConfig, x: np.ndarray, batch: int = 8) -> np.ndarray:
    out = []
    with ad.no_grad():
        for sl in _batches(len(x), batch):
            out.append(classify(Tensor(x[sl]), params, config).data)
    return np.concatenate(out) if out else np.empty(0)


def _bce_eval(p: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(p.astype(np.float64), 1e-7, 1 - 1e-7)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def _safe_auroc(p, y):
    try:
        return auroc(p, y)
    except ValueError:
        return None


def _lr_at(cfg: TrainConfig, step: int) -> float:
    if cfg.lr_decay_every > 0:
        return cfg.lr * cfg.lr_decay_gamma ** (step // cfg.lr_decay_every)
    return cfg.lr


def _write_metrics(path: Path, lines: list[str]) -> None:
    path.write_text("".join(line + "\n" for line in lines))


# -- pretraining ---------------------------------------------------------------------
def _pretrain_arm(name, x_tr, x_val, model_cfg, cfg: TrainConfig, lam: float, out_dir: Path):
    params = init_model(model_cfg, seed=cfg.seed)
    plist = parameters(params)
    loss_cfg = LossConfig(lam, model_cfg.spectral_pad)
    rng = np.random.default_rng(cfg.seed)
    batcher = _Batcher(np.zeros(len(x_tr)), cfg.batch_size, rng, balanced=False)
    state = AdamState(lr=cfg.lr)
    ckpt = out_dir / f"{name}.ckpt"
    lines, records = [], []
    best, bad_evals = math.inf, 0
    for step in range(1, cfg.steps + 1):
        xb = x_tr[batcher.next()]
        inp = mask_channels(xb, cfg.mask_channels_prob, rng)
        for p in plist:
            p.grad = None
        pred = reconstruct(Tensor(inp), params, model_cfg)
        total, mse, spec = combined_recon_loss(pred, Tensor(xb), loss_cfg)
        _check_finite(total.item(), step, "reconstruction loss")
        total.backward()
        state.lr = _lr_at(cfg, step)
        adam_step(plist, state)
        rec = {"loss_mse": mse.item(), "loss_spec": spec.item(), "loss_total": total.item()}
        if step % cfg.eval_every == 0 or step == cfg.steps:
            val = recon_losses(params, model_cfg, x_val, loss_cfg)
            rec["val_loss_total"] = val["loss_total"]
            rec["val_loss_mse"] = val["loss_mse"]
            if val["loss_total"] < best:
                best, bad_evals = val["loss_total"], 0
                save_checkpoint(ckpt, params, model_cfg, {"arm": name, "step": step})
            else:
                bad_evals += 1
        records.append({"step": step, **rec})
        lines.append(metric_line(step, **rec))
        if bad_evals >= cfg.patience:
            log.info("%s: early stop at step %d", name, step)
            break
    if cfg.steps == 0 or not ckpt.exists():
        save_checkpoint(ckpt, params, model_cfg, {"arm": name, "step": 0})
    _write_metrics(out_dir / f"{name}_metrics.jsonl", lines)
    best_params, _, _ = load_checkpoint(ckpt)
    final = recon_losses(best_params, model_cfg, x_tr, loss_cfg)
    final = {f"train_{k}": v for k, v in final.items()}
    final["lambda_spectral"] = lam
    return final, records, str(ckpt)


def pretrain(manifest: RecordManifest, model_cfg: ModelConfig, cfg: TrainConfig, out_dir) -> RunReport:
    """Minimise MSE + lambda * spectral loss of reconstruct(x) against x.

    The best-by-validation parameters are checkpointed; with ``ablate_spectral``
    a second arm with ``lambda_spectral = 0`` is trained from the same seed and
    both are summarised in ``report.arms``.
    """
    cfg.validate()
    model_cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (x_tr, _), (x_val, _) = _load_data(manifest, cfg)
    final, records, ckpt = _pretrain_arm("pretrain", x_tr, x_val, model_cfg, cfg,
                                         cfg.lambda_spectral, out_dir)
    report = RunReport("pretrain", final, None, records, ckpt,
                       {"model": asdict(model_cfg), "train": asdict(cfg)})
    if cfg.ablate_spectral:
        report.arms["with_spectral"] = dict(final, checkpoint=ckpt)
        a_final, _, a_ckpt = _pretrain_arm("pretrain_no_spectral", x_tr, x_val, model_cfg, cfg,
                                           0.0, out_dir)
        report.arms["no_spectral"] = dict(a_final, checkpoint=a_ckpt)
    (out_dir / "report.json").write_text(report.to_json())
    return report


# -- fine-tuning ---------------------------------------------------------------------
def _head_names(params: ModelParams) -> set[str]:
    return {n for n, _ in named_parameters(params) if n.startswith("cls_head.")}


def _finetune_arm(name, data, model_cfg, cfg: TrainConfig, init: ModelParams | None, out_dir: Path):
    (x_tr, y_tr), (x_val, y_val), (x_te, y_te) = data
    params = init if init is not None else init_model(model_cfg, seed=cfg.seed)
    heads = _head_names(params)
    named = named_parameters(params)
    if cfg.freeze_encoder:
        for n, t in named:
            t.requires_grad = n in heads
    trainable = [t for n, t in named if not cfg.freeze_encoder or n in heads]
    rng = np.random.default_rng(cfg.seed)
    batcher = _Batcher(y_tr, cfg.batch_size, rng, balanced=cfg.balance_classes)
    state = AdamState(lr=cfg.lr)
    ckpt = out_dir / f"{name}.ckpt"
    lines, records = [], []
    best, bad_evals = math.inf, 0
    for step in range(1, cfg.steps + 1):
        idx = batcher.next()
        xb = mask_channels(x_tr[idx], cfg.mask_channels_prob, rng)
        for p in trainable:
            p.grad = None
        loss = bce_loss(classify(Tensor(xb), params, model_cfg), y_tr[idx])
        _check_finite(loss.item(), step, "detection loss")
        loss.backward()
        state.lr = _lr_at(cfg, step)
        adam_step(trainable, state)
        rec = {"loss_bce": loss.item()}
        if step % cfg.eval_every == 0 or step == cfg.steps:
            pv = predict_proba(params, model_cfg, x_val)
            rec["val_loss_bce"] = _bce_eval(pv, y_val)
            val_auc = _safe_auroc(pv, y_val)
            if val_auc is not None:
                rec["val_auroc"] = val_auc
            if rec["val_loss_bce"] < best:
                best, bad_evals = rec["val_loss_bce"], 0
                save_checkpoint(ckpt, params, model_cfg, {"arm": name, "step": step})
            else:
                bad_evals += 1
        records.append({"step": step, **rec})
        lines.append(metric_line(step, **rec))
        if bad_evals >= cfg.patience:
            break
    for _, t in named:
        t.requires_grad = True
    if cfg.steps == 0 or not ckpt.exists():
        save_checkpoint(ckpt, params, model_cfg, {"arm": name, "step": 0})
    _write_metrics(out_dir / f"{name}_metrics.jsonl", lines)
    best_params, _, _ = load_checkpoint(ckpt)
    p_te = predict_proba(best_params, model_cfg, x_te)
    test_auc = _safe_auroc(p_te, y_te)
    final = {"test_loss_bce": _bce_eval(p_te, y_te), "auroc": test_auc,
             "auroc_undefined": test_auc is None}
    return final, records, str(ckpt)


def finetune(manifest: RecordManifest, checkpoint, model_cfg: ModelConfig | None,
             cfg: TrainConfig, out_dir) -> RunReport:
    """Minimise BCE of classify(x); AUROC is reported on the held-out test split.

    Starts from ``checkpoint`` unless ``cfg.from_scratch``.  With
    ``compare_from_scratch`` both the pretrained and the from-scratch arm run
    and both AUROCs are reported.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pre = None
    if checkpoint is not None and not (cfg.from_scratch and not cfg.compare_from_scratch):
        pre, ck_cfg, _ = load_checkpoint(checkpoint)
        model_cfg = ck_cfg
    if model_cfg is None:
        raise ConfigError("finetune needs a checkpoint or a model config")
    if pre is None and not cfg.from_scratch:
        raise ConfigError("finetune without from_scratch needs a pretrained checkpoint")
    model_cfg.validate()
    train_data, val_data = _load_data(manifest, cfg)
    test = load_split_windows(manifest, "test")
    if not test:
        raise DataError("test split has no windows")
    data = (train_data, val_data, _stack(test))
    if train_data[1].min() == train_data[1].max():
        raise DataError("training windows contain a single class; detection needs both")

    arms = {}
    if cfg.from_scratch and not cfg.compare_from_scratch:
        arms["from_scratch"] = _finetune_arm("finetune_scratch", data, model_cfg, cfg, None, out_dir)
    else:
        arms["pretrained"] = _finetune_arm("finetune", data, model_cfg, cfg, pre, out_dir)
        if cfg.compare_from_scratch:
            arms["from_scratch"] = _finetune_arm("finetune_scratch", data, model_cfg, cfg, None,
                                                 out_dir)
    main = next(iter(arms.values()))
    report = RunReport("finetune", main[0], main[0]["auroc"], main[1], main[2],
                       {"model": asdict(model_cfg), "train": asdict(cfg),
                        "init_checkpoint": str(checkpoint) if checkpoint else None})
    if len(arms) > 1:
        report.arms = {k: dict(v[0], checkpoint=v[2]) for k, v in arms.items()}
    (out_dir / "report.json").write_text(report.to_json())
    return report


# -- evaluation ----------------------------------------------------------------------
def evaluate(manifest: RecordManifest, checkpoint, split: str = "test") -> RunReport:
    """Score a frozen checkpoint on ``split``: reconstruction losses and, when both
    classes are present, detection AUROC."""
    params, model_cfg, _ = load_checkpoint(checkpoint)
    windows = load_split_windows(manifest, split)
    if not windows:
        raise DataError(f"split {split!r} has no windows")
    x, y = _stack(windows)
    final = recon_losses(params, model_cfg, x, LossConfig(model_cfg.lambda_spectral,
                                                          model_cfg.spectral_pad))
    p = predict_proba(params, model_cfg, x)
    final["loss_bce"] = _bce_eval(p, y)
    auc = _safe_auroc(p, y)
    final["auroc_undefined"] = auc is None
    final["n_windows"] = len(windows)
    return RunReport("evaluate", final, auc, [], str(checkpoint),
                     {"model": asdict(model_cfg), "split": split})
