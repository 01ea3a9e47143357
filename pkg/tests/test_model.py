import numpy as np
import pytest

from eegssm import autodiff as ad
from eegssm import model as M
from eegssm.autodiff import Tensor
from eegssm.layers import conv1d
from gradcheck import check_grads


def tiny_config(**kw):
    base = dict(channels=19, window_samples=32, front_filters=2, front_kernel=8, d_model=8,
                mamba_blocks_per_level=1, ssm_state=4, levels=1, pool_factor=4,
                level_dims=[8, 12], head_hidden=6)
    base.update(kw)
    return M.ModelConfig(**base)


def x_like(cfg, b=2, seed=0, dtype=np.float64):
    return Tensor(np.random.default_rng(seed).normal(size=(b, cfg.channels, cfg.window_samples)).astype(dtype))


def perturb(params, seed=1, scale=0.1):
    """Move zero-initialised tensors off zero so gradient checks probe every path."""
    rng = np.random.default_rng(seed)
    for name, t in M.named_parameters(params):
        if not np.any(t.data) or name.startswith("recon_head"):
            t.data[...] = rng.normal(scale=scale, size=t.shape)
        elif name.endswith("dt_up.bias"):
            # O(1) step sizes; at the 1e-3 init the dt gradients sit below FD round-off
            t.data[...] = rng.normal(scale=0.5, size=t.shape)


@pytest.fixture(scope="module")
def default_shapes():
    cfg = M.ModelConfig()
    params = M.init_model(cfg, seed=0)
    x = Tensor(np.random.default_rng(0).normal(size=(2, 19, 2000)).astype(np.float32))
    with ad.no_grad():
        bott, skips = M.encode(x, params, cfg)
    return cfg, params, bott, skips


def test_default_encode_shapes(default_shapes):
    _, _, bott, skips = default_shapes
    assert bott.shape == (2, 512, 125)
    assert [s.shape for s in skips] == [(2, 128, 2000), (2, 256, 500)]


def test_default_front_end_shape(default_shapes):
    cfg, params, _, _ = default_shapes
    x = Tensor(np.zeros((1, 19, 2000), dtype=np.float32))
    with ad.no_grad():
        assert M.front_end(x, params, cfg).shape == (1, 2000, 128)


def test_default_parameter_count(default_shapes):
    cfg, params, _, _ = default_shapes
    actual = sum(t.size for t in M.parameters(params))
    assert actual == M.parameter_count(cfg) == 15_649_468


@pytest.mark.parametrize("cfg", [M.reduced_config(), tiny_config(), tiny_config(levels=2, window_samples=64, level_dims=[8, 12, 16])])
def test_parameter_count_closed_form(cfg):
    assert sum(t.size for t in M.parameters(M.init_model(cfg))) == M.parameter_count(cfg)


@pytest.mark.parametrize("b", [1, 4])
def test_zero_init_reconstruction_is_exact_zero(b):
    cfg = M.reduced_config()
    params = M.init_model(cfg, seed=3)
    x = Tensor(np.random.default_rng(b).normal(scale=50, size=(b, 19, 2000)).astype(np.float32))
    with ad.no_grad():
        out = M.reconstruct(x, params, cfg).data
    assert out.shape == (b, 19, 2000)
    assert not np.any(out) and not np.signbit(out).any()


def test_recon_head_zero_and_decoder_widths():
    cfg = M.reduced_config()
    params = M.init_model(cfg)
    assert not np.any(params.recon_head.weight.data) and not np.any(params.recon_head.bias.data)
    for i, lvl in enumerate(params.decoder):
        assert lvl.conv.conv1.weight.shape[1] == 2 * cfg.level_dims[i]


def test_zero_input_zero_biases_zero_bottleneck():
    cfg = tiny_config()
    params = M.init_model(cfg, dtype=np.float64)
    with ad.no_grad():
        bott, _ = M.encode(Tensor(np.zeros((1, 19, 32))), params, cfg)
    assert not np.any(bott.data)


def test_front_end_constructed_mean():
    cfg = tiny_config(front_filters=1, front_kernel=1)
    params = M.init_model(cfg, dtype=np.float64)
    params.front_conv.weight.data[...] = 1.0
    params.front_conv.bias.data[...] = 0.0
    params.channel_mix.weight.data[...] = 1.0 / 19
    params.channel_mix.bias.data[...] = 0.0
    x = x_like(cfg)
    out = M.front_end(x, params, cfg).data  # (B, T, D)
    np.testing.assert_allclose(out, np.repeat(x.data.mean(axis=1)[:, :, None], 8, axis=2), atol=1e-12)


def test_front_end_matches_naive_composition():
    cfg = tiny_config(front_kernel=6)
    params = M.init_model(cfg, dtype=np.float64)
    perturb(params)
    x = x_like(cfg, b=1)
    w = params.front_conv.weight.data[:, 0, :]
    bias = params.front_conv.bias.data
    T, K, F = 32, 6, 2
    xp = np.pad(x.data[0], ((0, 0), (K // 2, K // 2)))
    feats = np.zeros((19 * F, T))
    for c in range(19):
        for f in range(F):
            for t in range(T):
                feats[c * F + f, t] = np.dot(w[f], xp[c, t : t + K]) + bias[f]
    ref = feats.T @ params.channel_mix.weight.data.T + params.channel_mix.bias.data
    np.testing.assert_allclose(M.front_end(x, params, cfg).data[0], ref, atol=1e-6)


def test_classify_zero_head_is_half_and_range():
    cfg = tiny_config()
    params = M.init_model(cfg, dtype=np.float64)
    x = x_like(cfg, b=3)
    with ad.no_grad():
        p = M.classify(x, params, cfg).data
        assert p.shape == (3,) and np.all((p > 0) & (p < 1))
        for lin in (params.cls_head.hidden, params.cls_head.out):
            lin.weight.data[...] = 0
        np.testing.assert_array_equal(M.classify(x, params, cfg).data, 0.5)


def test_wrong_input_shape_message():
    cfg = tiny_config()
    with pytest.raises(ValueError, match=r"\(B, 19, 32\)"):
        M.reconstruct(Tensor(np.zeros((1, 18, 32))), M.init_model(cfg), cfg)


def test_config_validation():
    with pytest.raises(ValueError, match="level_dims"):
        M.ModelConfig(levels=1).validate()
    with pytest.raises(ValueError, match="divisible"):
        M.ModelConfig(window_samples=2001).validate()
    with pytest.raises(ValueError, match="bogus"):
        M.ModelConfig.from_dict({"bogus": 1})


def test_end_to_end_reconstruction_gradient():
    cfg = tiny_config()
    params = M.init_model(cfg, seed=2, dtype=np.float64)
    perturb(params)
    x = x_like(cfg, b=1, seed=5)
    x.requires_grad = True
    w = Tensor(np.random.default_rng(9).normal(size=(1, 19, 32)))
    tensors = [x] + M.parameters(params)
    err = check_grads(lambda: (M.reconstruct(x, params, cfg) * w).sum(), tensors,
                      h=1e-4, max_entries=6, rng=np.random.default_rng(0))
    assert err < 1e-3


def test_end_to_end_classification_gradient():
    cfg = tiny_config()
    params = M.init_model(cfg, seed=4, dtype=np.float64)
    perturb(params)
    x = x_like(cfg, b=2, seed=6)
    x.requires_grad = True
    tensors = [x] + [t for n, t in M.named_parameters(params) if not n.startswith("decoder")]
    err = check_grads(lambda: M.classify(x, params, cfg).sum(), tensors,
                      h=1e-4, max_entries=6, rng=np.random.default_rng(1))
    assert err < 1e-3


def test_causality_through_front_end_free_ssm():
    # the SSM sublayers are causal; checked directly on an encoder Mamba stack
    from eegssm.ssm import mamba_stack

    cfg = tiny_config()
    params = M.init_model(cfg, dtype=np.float64)
    u = np.random.default_rng(0).normal(size=(1, 32, 8))
    base = mamba_stack(Tensor(u), params.encoder[0].blocks).data
    v = u.copy()
    v[0, 20] += 1.0
    out = mamba_stack(Tensor(v), params.encoder[0].blocks).data
    assert out[0, :20].tobytes() == base[0, :20].tobytes()


def test_checkpoint_round_trip(tmp_path):
    cfg = M.reduced_config()
    params = M.init_model(cfg, seed=11)
    perturb(params, scale=0.01)
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(path, params, cfg, {"note": "x"})
    loaded, cfg2, extra = M.load_checkpoint(path)
    assert cfg2 == cfg and extra == {"note": "x"}
    for (n1, a), (n2, b) in zip(M.named_parameters(params), M.named_parameters(loaded)):
        assert n1 == n2 and a.data.tobytes() == b.data.tobytes() and a.dtype == b.dtype
    x = Tensor(np.random.default_rng(0).normal(size=(1, 19, 2000)).astype(np.float32))
    with ad.no_grad():
        assert M.reconstruct(x, params, cfg).data.tobytes() == M.reconstruct(x, loaded, cfg).data.tobytes()
        assert M.classify(x, params, cfg).data.tobytes() == M.classify(x, loaded, cfg).data.tobytes()
    M.save_checkpoint(tmp_path / "again.ckpt", loaded, cfg2, extra)
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_header_is_key_sorted(tmp_path):
    cfg = tiny_config()
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(path, M.init_model(cfg), cfg)
    raw = path.read_bytes()
    assert raw[:4] == b"ESCK"
    hlen = int.from_bytes(raw[8:12], "little")
    import json

    header = raw[12 : 12 + hlen].decode()
    assert header == json.dumps(json.loads(header), sort_keys=True, separators=(",", ":"))


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValueError, match="magic"):
        M.load_checkpoint(bad)


def test_encoder_shared_between_tasks():
    cfg = tiny_config()
    params = M.init_model(cfg, dtype=np.float64)
    perturb(params)
    x = x_like(cfg)
    enc_ids = {id(t) for n, t in M.named_parameters(params) if n.startswith(("front_conv", "channel_mix", "encoder"))}
    recon_touch, cls_touch = set(), set()
    for fn, bucket in ((M.reconstruct, recon_touch), (M.classify, cls_touch)):
        for t in M.parameters(params):
            t.requires_grad = True
            t.grad = None
        fn(x, params, cfg).sum().backward()
        bucket.update(id(t) for t in M.parameters(params) if t.grad is not None and np.any(t.grad))
    assert enc_ids <= recon_touch and enc_ids <= cls_touch
    # updating the encoder through one task moves the other's output
    with ad.no_grad():
        before = M.classify(x, params, cfg).data.copy()
        params.channel_mix.weight.data += 0.05
        after = M.classify(x, params, cfg).data
    assert not np.array_equal(before, after)


def test_checkpoint_truncation_is_value_error(tmp_path):
    cfg = tiny_config()
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(path, M.init_model(cfg), cfg)
    raw = path.read_bytes()
    for cut in (6, 20, len(raw) // 2, len(raw) - 1):
        path.write_bytes(raw[:cut])
        with pytest.raises(ValueError):
            M.load_checkpoint(path)
