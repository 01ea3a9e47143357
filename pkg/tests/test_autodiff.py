import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eegssm import autodiff as ad
from eegssm.autodiff import Tensor
from gradcheck import check_grads

RNG = np.random.default_rng(1234)


def leaf(*shape, low=-1.0, high=1.0):
    return Tensor(RNG.uniform(low, high, size=shape), requires_grad=True)


def naive_dft(x):
    n = len(x)
    k = np.arange(n)
    return np.array([np.sum(x * np.exp(-2j * np.pi * f * k / n)) for f in range(n)])


# -- analytic examples ---------------------------------------------------------------
def test_softplus_and_sigmoid_at_zero():
    assert ad.softplus(Tensor(0.0)).item() == pytest.approx(np.log(2), abs=1e-12)
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5


def test_softplus_does_not_overflow():
    out = ad.softplus(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
    assert np.all(np.isfinite(out))
    assert out[2] == 1000.0
    assert out[0] == 0.0


def test_dft_of_impulse_is_flat():
    spec = ad.rfft(Tensor(np.array([1.0, 0, 0, 0]))).data.reshape(-1, 2)
    np.testing.assert_array_equal(spec, [[1, 0]] * 3)


def test_sum_of_squares_gradient():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2, 4, 6])


def test_unused_leaf_gets_zero_gradient():
    # an unreachable leaf has no gradient; callers read that as zeros
    x, y = leaf(3), leaf(3)
    (x * 2).sum().backward()
    assert y.grad is None or not np.any(y.grad)


def test_backward_rejects_non_scalar():
    x = leaf(3)
    with pytest.raises(ValueError, match="scalar"):
        (x * 2).backward()


def test_shared_input_accumulates():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = ad.exp(x)
    loss = (y * 3).sum() + (y * y).sum()
    loss.backward()
    expected = 3 * np.exp(x.data) + 2 * np.exp(2 * x.data)
    np.testing.assert_allclose(x.grad, expected, rtol=1e-12)


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ValueError) as exc:
        ad.add(leaf(2, 3), leaf(4, 3))
    msg = str(exc.value)
    assert "add" in msg and "(2, 3)" in msg and "(4, 3)" in msg
    with pytest.raises(ValueError, match="matmul"):
        ad.matmul(leaf(2, 3), leaf(2, 3))


def test_dft_length_zero_fails():
    with pytest.raises(ValueError):
        ad.rfft(Tensor(np.zeros(0)))


def test_no_grad_records_nothing():
    x = leaf(3)
    with ad.no_grad():
        y = x * 2
    assert y._vjp is None and not y.requires_grad


# -- finite-difference checks of every differentiable primitive ------------------------
UNARY = {
    "neg": ad.neg,
    "exp": ad.exp,
    "log": lambda t: ad.log(t),
    "abs": ad.abs,
    "sigmoid": ad.sigmoid,
    "silu": ad.silu,
    "softplus": ad.softplus,
    "pow3": lambda t: ad.power(t, 3.0),
    "pow_half": lambda t: ad.power(t, 0.5),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    positive = name in ("log", "pow_half")
    x = leaf(3, 4, low=0.3 if positive else -2.0, high=2.0)
    if name == "abs":  # keep away from the kink
        x.data += np.sign(x.data) * 0.2
    w = RNG.normal(size=(3, 4))
    err = check_grads(lambda: (UNARY[name](x) * Tensor(w)).sum(), [x])
    assert err < 1e-4


@pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul, ad.div])
def test_binary_gradients_with_broadcasting(op):
    a = leaf(3, 1, 4)
    b = leaf(5, 1, low=0.5, high=1.5)
    w = RNG.normal(size=(3, 5, 4))
    assert check_grads(lambda: (op(a, b) * Tensor(w)).sum(), [a, b]) < 1e-4


def test_matmul_mean_gradient():
    A, B = leaf(4, 3), leaf(3, 5)
    assert check_grads(lambda: ad.mean(ad.matmul(A, B)), [A, B]) < 1e-4


def test_batched_matmul_gradient():
    A, B = leaf(2, 4, 3), leaf(3, 5)
    w = Tensor(RNG.normal(size=(2, 4, 5)))
    assert check_grads(lambda: (ad.matmul(A, B) * w).sum(), [A, B]) < 1e-4


def test_shape_op_gradients():
    x = leaf(2, 3, 4)
    y = leaf(2, 2, 4)
    w = Tensor(RNG.normal(size=(4, 5, 2)))

    def loss():
        z = ad.concat([x, y], axis=1)  # (2,5,4)
        z = ad.transpose(z, (2, 1, 0))  # (4,5,2)
        z = ad.reshape(z * w, (20, 2))
        return ad.getitem(z, (slice(1, 15, 2), slice(None))).sum()

    assert check_grads(loss, [x, y]) < 1e-4


def test_advanced_index_accumulates_repeats():
    x = leaf(5)
    idx = np.array([0, 2, 2, 4])
    assert check_grads(lambda: (ad.getitem(x, idx) ** 2).sum(), [x]) < 1e-4


def test_reduction_gradients():
    x = leaf(3, 4, 5)
    w1 = Tensor(RNG.normal(size=(3, 5)))
    w2 = Tensor(RNG.normal(size=(4,)))

    def loss():
        return (x.sum(axis=1) * w1).sum() + (ad.mean(x, axis=(0, 2)) * w2).sum()

    assert check_grads(loss, [x]) < 1e-4


def test_max_gradient_and_tie_break():
    x = Tensor(np.arange(12.0).reshape(3, 4) * 0.37 % 1.0, requires_grad=True)
    w = Tensor(RNG.normal(size=3))
    assert check_grads(lambda: (x.max(axis=1) * w).sum(), [x]) < 1e-4
    vals, idx = ad.max_with_argmax(Tensor(np.array([1.0, 3.0, 3.0, 2.0])))
    assert vals.item() == 3.0 and int(idx) == 1


def test_where_and_compare_masks():
    x = leaf(10)
    mask = x > 0
    assert set(np.unique(mask.data)) <= {0.0, 1.0}
    assert check_grads(lambda: (ad.where(mask, x * 2, x * x)).sum(), [x]) < 1e-4


def test_broadcast_to_then_reduce_is_identity():
    x = leaf(3, 1)
    y = ad.broadcast_to(x, (2, 3, 4))
    back = y.sum(axis=(0, 2), keepdims=False) / 8
    np.testing.assert_allclose(back.data, x.data[:, 0], rtol=1e-12)
    assert check_grads(lambda: (ad.broadcast_to(x, (2, 3, 4)) ** 2).sum(), [x]) < 1e-4


def test_rfft_magnitude_gradient():
    x = leaf(2, 12)
    w = Tensor(RNG.uniform(0.5, 1.5, size=(2, 9)))
    assert check_grads(lambda: (ad.rfft_magnitude(x, 16) * w).sum(), [x]) < 1e-4


# -- DFT correctness ---------------------------------------------------------------------
@pytest.mark.parametrize("n", [1, 2, 8, 64, 512])
def test_fft_matches_naive_dft(n):
    x = RNG.normal(size=n)
    np.testing.assert_allclose(ad.fft(x), naive_dft(x), atol=1e-9)


def test_rfft_magnitude_matches_naive_with_padding():
    x = RNG.normal(size=100)
    mag = ad.rfft_magnitude(Tensor(x), 128).data
    ref = np.abs(naive_dft(np.concatenate([x, np.zeros(28)])))[:65]
    np.testing.assert_allclose(mag, ref, atol=1e-9)


def test_rfft_magnitude_examples():
    assert not np.any(ad.rfft_magnitude(Tensor(np.zeros(10)), 16).data)
    n, k = 64, 5
    x = np.cos(2 * np.pi * k * np.arange(n) / n)
    mag = ad.rfft_magnitude(Tensor(x), n).data
    assert mag[k] == pytest.approx(n / 2, abs=1e-9)
    assert np.delete(mag, k).max() < 1e-9


def test_rfft_magnitude_rejects_bad_pad():
    with pytest.raises(ValueError):
        ad.rfft_magnitude(Tensor(np.zeros(10)), 8)
    with pytest.raises(ValueError):
        ad.rfft_magnitude(Tensor(np.zeros(10)), 24)


# -- property tests -------------------------------------------------------------------------
@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.integers(1, 4))
def test_broadcast_sum_recovers_original(values, reps):
    x = Tensor(np.array(values))
    y = ad.broadcast_to(x, (reps, len(values)))
    np.testing.assert_allclose(y.sum(axis=0).data / reps, x.data, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 6))
def test_fft_power_of_two_property(log_n):
    n = 2**log_n
    x = np.random.default_rng(log_n).normal(size=n)
    np.testing.assert_allclose(ad.fft(x), naive_dft(x), atol=1e-9)


# -- serialization -------------------------------------------------------------------------
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(), (0,), (3,), (2, 3, 4)])
def test_tensor_round_trip_bit_exact(dtype, shape):
    arr = RNG.normal(size=shape).astype(dtype)
    buf = io.BytesIO()
    ad.save_tensor(buf, arr)
    raw = buf.getvalue()
    assert raw[:4] == b"ESSM"
    back = ad.load_tensor(io.BytesIO(raw))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_tensor_header_layout():
    buf = io.BytesIO()
    ad.save_tensor(buf, np.zeros((2, 3), dtype=np.float64))
    raw = buf.getvalue()
    assert raw[4:8] == (1).to_bytes(4, "little")
    assert raw[8:12] == (2).to_bytes(4, "little")
    assert raw[12:20] == (2).to_bytes(8, "little")
    assert raw[28] == 1
    assert len(raw) == 29 + 6 * 8


def test_tensor_load_errors():
    buf = io.BytesIO()
    ad.save_tensor(buf, np.ones(4, dtype=np.float32))
    raw = buf.getvalue()
    with pytest.raises(ValueError, match="magic"):
        ad.load_tensor(io.BytesIO(b"XXXX" + raw[4:]))
    with pytest.raises(ValueError, match="version"):
        ad.load_tensor(io.BytesIO(raw[:4] + (9).to_bytes(4, "little") + raw[8:]))
    for cut in range(len(raw)):
        with pytest.raises(EOFError):
            ad.load_tensor(io.BytesIO(raw[:cut]))
