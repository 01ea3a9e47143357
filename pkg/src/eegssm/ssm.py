"""Selective state space (Mamba-style) block.

The recurrence ``h_t = a_t * h_{t-1} + b_t`` is diagonal, so each
(channel, state) lane is an independent first-order linear recurrence.  Two
solvers are provided: a plain time loop and a Blelloch work-efficient scan
over ``(a, b)`` pairs with ``(a1, b1) . (a2, b2) = (a1 a2, a2 b1 + b2)``.

Inside the model the discretisation, scan and read-out run as one fused graph
node (:func:`selective_scan`) so the large (B, T, D, N) intermediates are not
each kept with their own gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, make_node
from .layers import (
    Conv1dParams,
    LayerNormParams,
    LinearParams,
    conv1d,
    init_conv1d,
    init_layer_norm,
    init_linear,
    layer_norm,
    linear,
)


@dataclass
class SsmBlockParams:
    in_proj: LinearParams  # d_model -> 2 * d_inner
    conv: Conv1dParams  # depthwise, causal
    A_log: Tensor  # (d_inner, d_state)
    x_to_BC: LinearParams  # d_inner -> 2 * d_state
    dt_down: LinearParams  # d_inner -> dt_rank, no bias
    dt_up: LinearParams  # dt_rank -> d_inner
    D_skip: Tensor  # (d_inner,)
    out_proj: LinearParams  # d_inner -> d_model
    norm: LayerNormParams

    @property
    def d_inner(self) -> int:
        return self.A_log.shape[0]

    @property
    def d_state(self) -> int:
        return self.A_log.shape[1]


def dt_rank_for(d_model: int) -> int:
    return math.ceil(d_model / 16)


def _inv_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


def init_ssm_block(rng: np.random.Generator, d_model: int, d_state: int = 16,
                   expand: int = 2, d_conv: int = 4, dt_min: float = 1e-3,
                   dt_max: float = 1e-1, dtype=np.float32) -> SsmBlockParams:
    d_inner = expand * d_model
    rank = dt_rank_for(d_model)
    dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=d_inner))
    dt_up = init_linear(rng, rank, d_inner, dtype=dtype)
    dt_up.bias = Tensor(_inv_softplus(dt).astype(dtype), requires_grad=True)
    a_log = np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1)))
    return SsmBlockParams(
        in_proj=init_linear(rng, d_model, 2 * d_inner, dtype=dtype),
        conv=init_conv1d(rng, d_inner, d_inner, d_conv, padding=d_conv - 1,
                         groups=d_inner, dtype=dtype),
        A_log=Tensor(a_log.astype(dtype), requires_grad=True),
        x_to_BC=init_linear(rng, d_inner, 2 * d_state, dtype=dtype),
        dt_down=init_linear(rng, d_inner, rank, bias=False, dtype=dtype),
        dt_up=dt_up,
        D_skip=Tensor(np.ones(d_inner, dtype=dtype), requires_grad=True),
        out_proj=init_linear(rng, d_inner, d_model, dtype=dtype),
        norm=init_layer_norm(d_model, dtype=dtype),
    )


# -- scans (plain ndarray) -------------------------------------------------------
def scan_sequential(a: np.ndarray, b: np.ndarray, axis: int = 0) -> np.ndarray:
    """h_t = a_t * h_{t-1} + b_t with h_{-1} = 0, looping over ``axis``."""
    a = np.moveaxis(np.asarray(a), axis, 0)
    b = np.moveaxis(np.asarray(b), axis, 0)
    if a.shape != b.shape:
        raise ValueError(f"scan: a {a.shape} and b {b.shape} differ")
    h = np.empty_like(b)
    state = np.zeros_like(b[0])
    for t in range(b.shape[0]):
        state = a[t] * state + b[t]
        h[t] = state
    return np.moveaxis(h, 0, axis)


def scan_parallel(a: np.ndarray, b: np.ndarray, axis: int = 0) -> np.ndarray:
    """Same recurrence as :func:`scan_sequential` via a Blelloch prefix scan.

    Up-sweep builds block reductions, down-sweep turns them into exclusive
    prefixes; each level is one vectorised step, so the combine order is fixed
    and results are deterministic.
    """
    a = np.moveaxis(np.asarray(a), axis, 0)
    b = np.moveaxis(np.asarray(b), axis, 0)
    if a.shape != b.shape:
        raise ValueError(f"scan: a {a.shape} and b {b.shape} differ")
    t = a.shape[0]
    if t == 0:
        return np.moveaxis(b.copy(), 0, axis)
    n = 1 << (t - 1).bit_length()
    rest = a.shape[1:]
    A = np.ones((n,) + rest, dtype=np.result_type(a, b))
    B = np.zeros((n,) + rest, dtype=A.dtype)
    A[:t] = a
    B[:t] = b

    s = 1
    while s < n:
        Av = A.reshape((n // (2 * s), 2 * s) + rest)
        Bv = B.reshape((n // (2 * s), 2 * s) + rest)
        la, lb = Av[:, s - 1], Bv[:, s - 1]
        ra, rb = Av[:, 2 * s - 1], Bv[:, 2 * s - 1]
        Bv[:, 2 * s - 1] = ra * lb + rb
        Av[:, 2 * s - 1] = la * ra
        s *= 2

    A[n - 1] = 1
    B[n - 1] = 0
    s = n // 2
    while s >= 1:
        Av = A.reshape((n // (2 * s), 2 * s) + rest)
        Bv = B.reshape((n // (2 * s), 2 * s) + rest)
        ta, tb = Av[:, s - 1].copy(), Bv[:, s - 1].copy()
        pa, pb = Av[:, 2 * s - 1].copy(), Bv[:, 2 * s - 1].copy()
        Av[:, s - 1], Bv[:, s - 1] = pa, pb
        # prefix . left-block reduction
        Av[:, 2 * s - 1] = pa * ta
        Bv[:, 2 * s - 1] = ta * pb + tb
        s //= 2

    h = a * B[:t] + b  # inclusive = exclusive prefix . own element
    return np.moveaxis(h, 0, axis)


def _reverse_adjoint(a: np.ndarray, gh: np.ndarray, scan) -> np.ndarray:
    """lambda_t = gh_t + a_{t+1} lambda_{t+1} along axis 1."""
    a_next = np.zeros_like(a)
    a_next[:, :-1] = a[:, 1:]
    return scan(a_next[:, ::-1], gh[:, ::-1], axis=1)[:, ::-1]


def linear_scan(a: Tensor, b: Tensor, parallel: bool = True) -> Tensor:
    """Differentiable scan over axis 1 of (B, T, ...) tensors."""
    scan = scan_parallel if parallel else scan_sequential
    h = scan(a.data, b.data, axis=1)

    def vjp(g):
        lam = _reverse_adjoint(a.data, g, scan)
        h_prev = np.zeros_like(h)
        h_prev[:, 1:] = h[:, :-1]
        return lam * h_prev, lam

    return make_node(h, (a, b), vjp, "scan")


# -- discretisation ----------------------------------------------------------------
def discretize(x: Tensor, p: SsmBlockParams):
    """Input-dependent step sizes and discretised dynamics for x of shape (..., T, d_inner).

    Returns ``(dt, A_bar, B, C)`` with ``dt = softplus(dt_up(dt_down(x)))``,
    ``A_bar = exp(dt * A)`` where ``A = -exp(A_log)``, and ``B, C`` the
    per-step input/output maps of shape (..., T, d_state).
    """
    if not np.all(np.isfinite(x.data)):
        raise FloatingPointError("discretize: non-finite input")
    n = p.d_state
    dt = ad.softplus(linear(linear(x, p.dt_down), p.dt_up))
    A = -ad.exp(p.A_log)
    A_bar = ad.exp(dt.reshape(dt.shape + (1,)) * A)
    bc = linear(x, p.x_to_BC)
    return dt, A_bar, bc[..., :n], bc[..., n:]


def ssm_reference(x: Tensor, dt: Tensor, A_bar: Tensor, Bm: Tensor, Cm: Tensor,
                  D_skip: Tensor, parallel: bool = True) -> Tensor:
    """Composed-primitive SSM read-out: y_t = C_t . h_t + D * x_t for (B, T, d_inner) x."""
    bx = (dt * x).reshape(x.shape + (1,)) * Bm.reshape(Bm.shape[:-1] + (1, Bm.shape[-1]))
    h = linear_scan(A_bar, bx, parallel=parallel)
    y = (h * Cm.reshape(Cm.shape[:-1] + (1, Cm.shape[-1]))).sum(axis=-1)
    return y + D_skip * x


def selective_scan(x: Tensor, dt: Tensor, A: Tensor, Bm: Tensor, Cm: Tensor,
                   D_skip: Tensor, parallel: bool = True) -> Tensor:
    """Fused discretise + scan + read-out.

    x, dt: (B, T, D); A: (D, N); Bm, Cm: (B, T, N); D_skip: (D,).
    Equivalent to :func:`ssm_reference` with ``A_bar = exp(dt * A)``.
    """
    scan = scan_parallel if parallel else scan_sequential
    xd, dtd, Ad, Bd, Cd = x.data, dt.data, A.data, Bm.data, Cm.data
    dA = dtd[..., None] * Ad
    a = np.exp(dA)
    dtx = dtd * xd
    b = dtx[..., None] * Bd[:, :, None, :]
    h = scan(a, b, axis=1)
    y = np.einsum("btdn,btn->btd", h, Cd, optimize=True) + D_skip.data * xd

    def vjp(gy):
        gh = gy[..., None] * Cd[:, :, None, :]
        gC = np.einsum("btd,btdn->btn", gy, h, optimize=True)
        gD = np.einsum("btd,btd->d", gy, xd)
        lam = _reverse_adjoint(a, gh, scan)
        h_prev = np.zeros_like(h)
        h_prev[:, 1:] = h[:, :-1]
        g_dA = lam * h_prev * a
        gdt = np.einsum("btdn,dn->btd", g_dA, Ad, optimize=True)
        gA = np.einsum("btdn,btd->dn", g_dA, dtd, optimize=True)
        g_dtx = np.einsum("btdn,btn->btd", lam, Bd, optimize=True)
        gB = np.einsum("btdn,btd->btn", lam, dtx, optimize=True)
        gdt = gdt + g_dtx * xd
        gx = g_dtx * dtd + gy * D_skip.data
        return gx, gdt, gA, gB, gC, gD

    return make_node(y.astype(xd.dtype, copy=False), (x, dt, A, Bm, Cm, D_skip), vjp,
                     "selective_scan")


# -- block -------------------------------------------------------------------------
def _causal_dwconv(x: Tensor, p: Conv1dParams) -> Tensor:
    """Depthwise conv over (B, T, D) that only looks backwards in time."""
    t = x.shape[1]
    y = conv1d(ad.transpose(x, (0, 2, 1)), p)  # symmetric pad k-1 -> length T+k-1
    return ad.transpose(y[:, :, :t], (0, 2, 1))


def mamba_inner(u: Tensor, p: SsmBlockParams, parallel: bool = True) -> Tensor:
    d_inner = p.d_inner
    n = p.d_state
    xz = linear(u, p.in_proj)
    xh, z = xz[..., :d_inner], xz[..., d_inner:]
    xc = ad.silu(_causal_dwconv(xh, p.conv))
    dt = ad.softplus(linear(linear(xc, p.dt_down), p.dt_up))
    bc = linear(xc, p.x_to_BC)
    A = -ad.exp(p.A_log)
    y = selective_scan(xc, dt, A, bc[..., :n], bc[..., n:], p.D_skip, parallel=parallel)
    return linear(y * ad.silu(z), p.out_proj)


def mamba_block(u: Tensor, p: SsmBlockParams, parallel: bool = True) -> Tensor:
    """out = u + layer_norm(mamba_inner(u)) for u of shape (B, T, d_model) or (T, d_model)."""
    if not np.all(np.isfinite(u.data)):
        raise FloatingPointError("mamba_block: non-finite input")
    squeeze = u.ndim == 2
    if squeeze:
        u = u.reshape((1,) + u.shape)
    out = u + layer_norm(mamba_inner(u, p, parallel), p.norm)
    return out.reshape(out.shape[1:]) if squeeze else out


def mamba_stack(u: Tensor, blocks: list[SsmBlockParams], parallel: bool = True) -> Tensor:
    for p in blocks:
        u = mamba_block(u, p, parallel)
    return u
