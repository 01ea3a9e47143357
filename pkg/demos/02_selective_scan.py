"""The linear recurrence h_t = a_t h_{t-1} + b_t computed two ways, and one Mamba block."""

import time

import numpy as np

from eegssm.autodiff import Tensor, no_grad
from eegssm.ssm import init_ssm_block, mamba_block, scan_parallel, scan_sequential

rng = np.random.default_rng(1)
a = rng.uniform(0.5, 1.0, size=(2000, 64))
b = rng.normal(size=(2000, 64))
for name, fn in (("sequential", scan_sequential), ("Blelloch", scan_parallel)):
    t0 = time.perf_counter()
    h = fn(a, b)
    print(f"{name:>10}: {1e3 * (time.perf_counter() - t0):.1f} ms")
print("max difference:", np.abs(scan_sequential(a, b) - scan_parallel(a, b)).max())

block = init_ssm_block(rng, d_model=16, d_state=8, dtype=np.float64)
u = Tensor(rng.normal(size=(1, 500, 16)))
with no_grad():
    out = mamba_block(u, block, parallel=False)
print("Mamba block maps", u.shape, "->", out.shape)
