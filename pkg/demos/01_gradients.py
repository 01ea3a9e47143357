"""Reverse-mode gradients on the numpy autodiff engine, checked against central differences."""

import numpy as np

from eegssm import autodiff as ad
from eegssm.autodiff import Tensor

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)


def loss():
    return ad.silu(x @ w).sum()


loss().backward()
print("analytic dL/dw:\n", w.grad)

h = 1e-6
fd = np.zeros_like(w.data)
for idx in np.ndindex(w.shape):
    w.data[idx] += h
    up = loss().item()
    w.data[idx] -= 2 * h
    down = loss().item()
    w.data[idx] += h
    fd[idx] = (up - down) / (2 * h)
print("max |analytic - finite difference| =", np.abs(fd - w.grad).max())
