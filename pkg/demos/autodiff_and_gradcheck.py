"""
Tape autodiff and finite differences
====================================

A single conv + ReLU + pooling chain, differentiated by the tape and then
checked coordinate by coordinate against central differences.
"""

import numpy as np

from ecmsa import ops
from ecmsa.gradcheck import check_tensors, full_suite
from ecmsa.tensor import Tensor

r = np.random.default_rng(0)
x = Tensor(r.normal(size=(2, 8, 8)), requires_grad=True)
w = Tensor(r.normal(size=(3, 2, 3, 3)) * 0.3, requires_grad=True)
b = Tensor(r.normal(size=3) * 0.1, requires_grad=True)

# %%
# Forward builds the tape; ``backward`` walks it in reverse.  Only leaves
# keep a ``.grad``.

def f():
    h = ops.relu(ops.conv2d(x, w, b))
    return ops.sum(ops.pool_avg_global(h))

y = f()
y.backward()
print("loss", y.item())
print("dL/db", b.grad)

# %%
# The same closure, re-evaluated with each coordinate nudged by +-1e-5.

errs = check_tensors(f, [x, w, b])
print("max relative error per tensor:", ["%.1e" % e for e in errs])

# %%
# The packaged suite covers every op on three seeds plus a small
# end-to-end network.  It takes roughly half a minute.

for res in full_suite(0)[-3:]:
    print("%-44s %.2e  %s" % (res.name, res.error, "ok" if res.ok else "FAIL"))
