"""Central finite-difference checks shared by the test modules."""

import numpy as np

from eegssm.autodiff import Tensor


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f() / d arr by central differences; ``arr`` is perturbed in place."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / scale)


def check_grads(loss_fn, tensors: list[Tensor], h: float = 1e-5, max_entries: int | None = None,
                rng=None) -> float:
    """Worst relative error between autodiff and finite-difference gradients.

    ``loss_fn`` must rebuild the graph from the current ``.data`` of ``tensors``.
    With ``max_entries`` only a random subset of coordinates per tensor is probed.
    """
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            num[j] = (fp - fm) / (2 * h)
        worst = max(worst, rel_err(analytic.reshape(-1)[idx], num))
    return worst
