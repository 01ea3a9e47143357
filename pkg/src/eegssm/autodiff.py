"""Dense n-d arrays with reverse-mode automatic differentiation.

Values live in contiguous row-major numpy buffers.  Every primitive records a
node (inputs + vector-Jacobian rule) when any input requires grad, and
:meth:`Tensor.backward` replays those nodes in reverse topological order.

New primitives can be registered from other modules with :func:`make_node`,
which is how the convolution and scan kernels plug in without going through
dozens of tiny elementwise nodes.
"""

from __future__ import annotations

import contextlib
import struct
from typing import BinaryIO, Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "make_node",
    "no_grad",
    "is_grad_enabled",
    "exp",
    "log",
    "abs",
    "sigmoid",
    "silu",
    "softplus",
    "concat",
    "broadcast_to",
    "max_with_argmax",
    "where",
    "fft",
    "rfft",
    "complex_abs",
    "rfft_magnitude",
    "save_tensor",
    "load_tensor",
]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """An n-d array that can track gradients.

    ``data`` is always a contiguous ``np.ndarray``; ``grad`` is ``None`` until a
    backward pass reaches this tensor.
    """

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype, copy=True) if dtype is not None else np.asarray(data)
        if arr.dtype.kind in "iub" and dtype is None:
            arr = arr.astype(np.float64)
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = ""

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- backward ------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() needs a scalar loss, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def __gt__(self, other):
        return _compare(np.greater, self, other)

    def __ge__(self, other):
        return _compare(np.greater_equal, self, other)

    def __lt__(self, other):
        return _compare(np.less, self, other)

    def __le__(self, other):
        return _compare(np.less_equal, self, other)

    __hash__ = object.__hash__

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_with_argmax(self, axis, keepdims)[0]


def tensor(data, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def make_node(
    data: np.ndarray,
    parents: Iterable[Tensor],
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    op: str = "",
) -> Tensor:
    """Wrap ``data`` as the output of a primitive.

    ``vjp`` maps the output cotangent to one cotangent per parent (``None`` for
    parents that need none).  No node is recorded when grad is disabled or no
    parent requires grad.
    """
    parents = tuple(parents)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        out._op = op
    return out


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(
            f"{op}: shapes {a.shape} and {b.shape} cannot be broadcast together"
        ) from None


# -- elementwise binary ------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("add", a, b)
    return make_node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("sub", a, b)
    return make_node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("mul", a, b)
    return make_node(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return make_node(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        ),
        "div",
    )


def power(a: Tensor, exponent: float) -> Tensor:
    if isinstance(exponent, Tensor):
        raise TypeError("pow: only constant exponents are supported")
    p = float(exponent)
    out = a.data**p
    return make_node(out, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


# -- elementwise unary -------------------------------------------------------
def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return make_node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_np(a.data)
    return make_node(s, (a,), lambda g: (g * s * (1 - s),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    s = _sigmoid_np(a.data)
    x = a.data
    return make_node(x * s, (a,), lambda g: (g * s * (1 + x * (1 - s)),), "silu")


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated as max(x, 0) + log1p(exp(-|x|))."""
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return make_node(out, (a,), lambda g: (g * _sigmoid_np(x),), "softplus")


def _compare(fn, a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a)
    return Tensor(fn(a.data, b.data).astype(a.dtype))


def where(mask, a, b) -> Tensor:
    """Select ``a`` where mask is nonzero else ``b``; mask is not differentiated."""
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask).astype(bool)
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    return make_node(
        np.where(m, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(np.where(m, g, 0), a.shape), _unbroadcast(np.where(m, 0, g), b.shape)),
        "where",
    )


# -- linear algebra and shape ------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands need ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data @ b.data, (a, b), vjp, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return make_node(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
        "transpose",
    )


def getitem(a: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        index = index.data.astype(np.intp)

    basic = not any(
        isinstance(i, (np.ndarray, list))
        for i in (index if isinstance(index, tuple) else (index,))
    )

    def vjp(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_node(np.array(a.data[index], copy=True), (a,), vjp, "slice")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(
            t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax
        ):
            raise ValueError(
                f"concat: shapes {[t.shape for t in tensors]} disagree off axis {axis}"
            )
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
            for i in range(len(tensors))
        )

    return make_node(np.concatenate([t.data for t in tensors], axis=ax), tensors, vjp, "concat")


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ValueError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None
    return make_node(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast")


# -- reductions --------------------------------------------------------------
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(np.asarray(out), (a,), vjp, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims) if axes else a.data.copy()

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make_node(np.asarray(out), (a,), vjp, "mean")


def max_with_argmax(a: Tensor, axis=None, keepdims=False) -> tuple[Tensor, np.ndarray]:
    """Maximum along ``axis`` and the (lowest) index attaining it.

    With ``axis=None`` the index is into the flattened array.
    """
    if axis is None:
        flat = a.data.reshape(-1)
        idx = np.asarray(np.argmax(flat))
        out = flat[idx]
        if keepdims:
            out = out.reshape((1,) * a.ndim)

        def vjp_flat(g):
            full = np.zeros(a.size, dtype=a.dtype)
            full[idx] = g.reshape(())
            return (full.reshape(a.shape),)

        return make_node(np.asarray(out), (a,), vjp_flat, "max"), idx
    ax = axis % a.ndim
    idx = np.argmax(a.data, axis=ax)  # first occurrence wins
    out = np.take_along_axis(a.data, np.expand_dims(idx, ax), axis=ax)
    if not keepdims:
        out = np.squeeze(out, axis=ax)

    def vjp(g):
        full = np.zeros_like(a.data)
        gk = g if keepdims else np.expand_dims(g, ax)
        np.put_along_axis(full, np.expand_dims(idx, ax), gk, axis=ax)
        return (full,)

    return make_node(out, (a,), vjp, "max"), idx


# -- Fourier transforms ------------------------------------------------------
def _bit_reverse_perm(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 Cooley-Tukey DFT along the last axis (plain ndarray).

    The last-axis length must be a power of two.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if n == 0:
        raise ValueError("fft: length must be positive")
    if n & (n - 1):
        raise ValueError(f"fft: length {n} is not a power of two")
    ctype = np.complex64 if x.dtype in (np.float32, np.complex64) else np.complex128
    a = x[..., _bit_reverse_perm(n)].astype(ctype)
    lead = a.shape[:-1]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size).astype(ctype)
        blocks = a.reshape(lead + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        size *= 2
    return a


def rfft(x: Tensor, n: int | None = None) -> Tensor:
    """Real-input DFT of the last axis, zero-padded to ``n``.

    Returns ``n//2 + 1`` bins with real and imaginary parts interleaved along
    the last axis, i.e. shape ``(..., 2*(n//2+1))``.
    """
    length = x.shape[-1]
    n = length if n is None else int(n)
    if n == 0 or length == 0:
        raise ValueError("rfft: length must be positive")
    if n < length:
        raise ValueError(f"rfft: pad length {n} is shorter than input length {length}")
    nb = n // 2 + 1
    padded = np.zeros(x.shape[:-1] + (n,), dtype=x.dtype)
    padded[..., :length] = x.data
    spec = fft(padded)[..., :nb]
    out = np.empty(x.shape[:-1] + (nb, 2), dtype=x.dtype)
    out[..., 0] = spec.real
    out[..., 1] = spec.imag
    out = out.reshape(x.shape[:-1] + (2 * nb,))

    def vjp(g):
        g = g.reshape(g.shape[:-1] + (nb, 2))
        full = np.zeros(g.shape[:-2] + (n,), dtype=np.result_type(g.dtype, np.complex64))
        # x_bar[m] = Re(sum_k conj(G_k) e^{-2pi i k m / n})
        full[..., :nb] = g[..., 0] - 1j * g[..., 1]
        xbar = fft(full).real[..., :length]
        return (np.ascontiguousarray(xbar.astype(x.dtype)),)

    return make_node(out, (x,), vjp, "rfft")


def complex_abs(z: Tensor) -> Tensor:
    """Magnitudes of an interleaved (re, im, re, im, ...) last axis.

    The gradient at an exactly zero bin is taken as zero.
    """
    if z.shape[-1] % 2:
        raise ValueError(f"complex_abs: interleaved axis has odd length {z.shape[-1]}")
    pairs = z.data.reshape(z.shape[:-1] + (z.shape[-1] // 2, 2))
    mag = np.sqrt(pairs[..., 0] ** 2 + pairs[..., 1] ** 2)

    def vjp(g):
        safe = np.where(mag > 0, mag, 1)
        scale = np.where(mag > 0, g / safe, 0)
        return ((pairs * scale[..., None]).reshape(z.shape),)

    return make_node(mag, (z,), vjp, "complex_abs")


def rfft_magnitude(x: Tensor, pad_to: int) -> Tensor:
    """Magnitude spectrum (``pad_to//2 + 1`` bins) of ``x`` zero-padded to ``pad_to``."""
    pad_to = int(pad_to)
    if pad_to <= 0 or pad_to & (pad_to - 1):
        raise ValueError(f"rfft_magnitude: pad_to={pad_to} must be a power of two")
    if pad_to < x.shape[-1]:
        raise ValueError(
            f"rfft_magnitude: pad_to={pad_to} is shorter than signal length {x.shape[-1]}"
        )
    return complex_abs(rfft(x, pad_to))


# -- serialization -----------------------------------------------------------
TENSOR_MAGIC = b"ESSM"
TENSOR_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def save_tensor(fh: BinaryIO, value) -> None:
    """Write one tensor record (little-endian) to an open binary stream."""
    arr = np.asarray(value.data if isinstance(value, Tensor) else value)
    if arr.dtype not in _DTYPE_TAGS:
        raise TypeError(f"save_tensor: unsupported dtype {arr.dtype}")
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<II", TENSOR_VERSION, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(struct.pack("<B", _DTYPE_TAGS[arr.dtype]))
    fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise EOFError(f"truncated tensor record: wanted {n} bytes, got {len(buf)}")
    return buf


def load_tensor(fh: BinaryIO) -> np.ndarray:
    """Read one tensor record written by :func:`save_tensor`."""
    magic = _read_exact(fh, 4)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    version, rank = struct.unpack("<II", _read_exact(fh, 8))
    if version != TENSOR_VERSION:
        raise ValueError(f"unsupported tensor format version {version}")
    shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank))
    (tag,) = struct.unpack("<B", _read_exact(fh, 1))
    if tag not in _TAG_DTYPES:
        raise ValueError(f"unknown dtype tag {tag}")
    dtype = _TAG_DTYPES[tag]
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    raw = _read_exact(fh, count * dtype.itemsize)
    return np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
