import dataclasses
import json

import numpy as np
import pytest

from eegssm import model as M
from eegssm import train as T
from eegssm.errors import ConfigError, DataError, NumericalError
from eegssm.ingest.manifest import RecordManifest


def small_model():
    return M.reduced_config(d_model=8, ssm_state=4, level_dims=[8, 12, 16], head_hidden=8)


def quick(**kw):
    base = dict(seed=1, batch_size=2, steps=4, lr=3e-3, eval_every=2, patience=10)
    base.update(kw)
    return T.TrainConfig(**base)


# -- channel masking ---------------------------------------------------------------------
def test_mask_prob_zero_is_identity():
    x = np.random.default_rng(0).normal(size=(3, 19, 10))
    assert T.mask_channels(x, 0.0, np.random.default_rng(1)) is x


def test_mask_degenerate_guard_keeps_a_channel():
    rng = np.random.default_rng(2)
    x = np.ones((200, 19, 4))
    out = T.mask_channels(x, 0.999, rng)
    assert np.all(out.any(axis=(1, 2)))


def test_mask_rate_monte_carlo():
    rng = np.random.default_rng(3)
    x = np.ones((10_000, 19, 1))
    for prob in (0.1, 0.3, 0.5):
        rate = 1 - T.mask_channels(x, prob, rng)[:, :, 0].mean()
        assert abs(rate - prob) < 0.02


def test_mask_rejects_bad_prob():
    with pytest.raises(ValueError):
        T.mask_channels(np.ones((1, 19, 2)), 1.0, np.random.default_rng(0))


# -- config --------------------------------------------------------------------------------
def test_train_config_validation():
    with pytest.raises(ConfigError, match="unknown"):
        T.TrainConfig.from_dict({"sed": 1})
    with pytest.raises(ConfigError):
        T.TrainConfig.from_dict({"lr": 0})
    with pytest.raises(ConfigError):
        T.TrainConfig.from_dict({"mask_channels_prob": 1.0})


def test_split_patients_disjoint():
    from eegssm.ingest.manifest import RecordEntry

    m = RecordManifest([RecordEntry(f"r{i}", "x.edf", "x.csv", "train", f"p{i}") for i in range(10)])
    train, val = T.split_patients(m, 0.2, seed=0)
    assert len(val) == 2 and not set(train) & set(val) and len(train) == 8
    assert T.split_patients(m, 0.0, 0) == (m.patients("train"), m.patients("train"))


# -- pretraining -----------------------------------------------------------------------------
def test_pretrain_deterministic_and_logged(small_corpus, tmp_path):
    _, m = small_corpus
    r1 = T.pretrain(m, small_model(), quick(), tmp_path / "a")
    r2 = T.pretrain(m, small_model(), quick(), tmp_path / "b")
    log_a = (tmp_path / "a" / "pretrain_metrics.jsonl").read_bytes()
    assert log_a == (tmp_path / "b" / "pretrain_metrics.jsonl").read_bytes()
    assert r1.final == r2.final
    lines = [json.loads(s) for s in log_a.decode().splitlines()]
    assert [d["step"] for d in lines] == [1, 2, 3, 4]
    assert all(np.isfinite(d["loss_total"]) for d in lines)
    assert "val_loss_total" in lines[1]
    assert (tmp_path / "a" / "pretrain.ckpt").exists()
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["kind"] == "pretrain" and report["config"]["train"]["steps"] == 4


def test_pretrain_ablation_runs_both_arms(small_corpus, tmp_path):
    _, m = small_corpus
    report = T.pretrain(m, small_model(), quick(steps=2, ablate_spectral=True), tmp_path)
    assert set(report.arms) == {"with_spectral", "no_spectral"}
    assert report.arms["no_spectral"]["lambda_spectral"] == 0.0
    assert (tmp_path / "pretrain_no_spectral_metrics.jsonl").exists()


def test_pretrain_reduces_loss(small_corpus, tmp_path):
    _, m = small_corpus
    report = T.pretrain(m, small_model(), quick(steps=30, lr=1e-2, eval_every=30), tmp_path)
    first = report.metrics[0]["loss_mse"]
    assert report.final["train_loss_mse"] < first


def test_nan_aborts_with_step(small_corpus, tmp_path, monkeypatch):
    _, m = small_corpus
    real = T.combined_recon_loss
    calls = {"n": 0}

    def poisoned(pred, target, cfg):
        calls["n"] += 1
        total, mse, spec = real(pred, target, cfg)
        if calls["n"] == 3:
            total = total * float("nan")
        return total, mse, spec

    monkeypatch.setattr(T, "combined_recon_loss", poisoned)
    with pytest.raises(NumericalError, match="step 3") as info:
        T.pretrain(m, small_model(), quick(eval_every=100), tmp_path)
    assert info.value.step == 3 and info.value.exit_code == 4


def test_empty_training_split_fails(tmp_path):
    with pytest.raises(DataError, match="no windows"):
        T.pretrain(RecordManifest([], tmp_path), small_model(), quick(), tmp_path / "o")


# -- fine-tuning and evaluation ----------------------------------------------------------
@pytest.fixture(scope="module")
def pretrained(small_corpus, tmp_path_factory):
    _, m = small_corpus
    out = tmp_path_factory.mktemp("pre")
    T.pretrain(m, small_model(), quick(steps=2), out)
    return out / "pretrain.ckpt"


def test_freeze_encoder_updates_only_head(small_corpus, pretrained, tmp_path):
    _, m = small_corpus
    before_bytes = pretrained.read_bytes()
    report = T.finetune(m, pretrained, None, quick(steps=3, freeze_encoder=True, eval_every=1), tmp_path)
    assert pretrained.read_bytes() == before_bytes
    init, _, _ = M.load_checkpoint(pretrained)
    after, _, _ = M.load_checkpoint(report.checkpoint)
    changed = {n for (n, a), (_, b) in zip(M.named_parameters(init), M.named_parameters(after))
               if not np.array_equal(a.data, b.data)}
    assert changed and all(n.startswith("cls_head.") for n in changed)


def test_finetune_compare_from_scratch(small_corpus, pretrained, tmp_path):
    _, m = small_corpus
    report = T.finetune(m, pretrained, None, quick(steps=2, compare_from_scratch=True), tmp_path)
    assert set(report.arms) == {"pretrained", "from_scratch"}
    for arm in report.arms.values():
        assert arm["auroc"] is None or 0 <= arm["auroc"] <= 1
    body = json.loads((tmp_path / "report.json").read_text())
    assert set(body["arms"]) == {"pretrained", "from_scratch"}


def test_finetune_requires_checkpoint(small_corpus, tmp_path):
    _, m = small_corpus
    with pytest.raises(ConfigError):
        T.finetune(m, None, small_model(), quick(), tmp_path)


def test_finetune_deterministic(small_corpus, pretrained, tmp_path):
    _, m = small_corpus
    T.finetune(m, pretrained, None, quick(steps=3), tmp_path / "a")
    T.finetune(m, pretrained, None, quick(steps=3), tmp_path / "b")
    assert (tmp_path / "a" / "finetune_metrics.jsonl").read_bytes() == \
        (tmp_path / "b" / "finetune_metrics.jsonl").read_bytes()


def test_evaluate_train_vs_test_and_determinism(small_corpus, tmp_path):
    _, m = small_corpus
    report = T.pretrain(m, small_model(), quick(steps=40, lr=1e-2, eval_every=40), tmp_path)
    on_train = T.evaluate(m, report.checkpoint, "train")
    on_test = T.evaluate(m, report.checkpoint, "test")
    assert on_train.final["loss_mse"] <= on_test.final["loss_mse"] * 1.5
    again = T.evaluate(m, report.checkpoint, "train")
    assert json.dumps(again.final, sort_keys=True) == json.dumps(on_train.final, sort_keys=True)


def test_evaluate_empty_split_fails(small_corpus, pretrained):
    _, m = small_corpus
    only_train = dataclasses.replace(m, records=[r for r in m.records if r.split == "train"])
    with pytest.raises(DataError, match="no windows"):
        T.evaluate(only_train, pretrained, "test")
