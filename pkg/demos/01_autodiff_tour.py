"""Autodiff tour: build a small graph, backprop, and check against finite differences.

Run: python3 demos/01_autodiff_tour.py
"""
import numpy as np

from acnet import ops
from acnet.optim import Adam
from acnet.tensor import Tensor

# %% a scalar function of a matrix
rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True, dtype=np.float64)
w = Tensor(rng.normal(size=(4, 2)), requires_grad=True, dtype=np.float64)
y = (x @ w).tanh().sum()
y.backward()
print("y =", round(y.item(), 6))
print("dy/dw =\n", np.round(w.grad, 4))

# %% the same gradient by central differences
eps = 1e-6
numeric = np.zeros_like(w.data)
for i in np.ndindex(w.data.shape):
    plus, minus = w.data.copy(), w.data.copy()
    plus[i] += eps
    minus[i] -= eps
    numeric[i] = (np.tanh(x.data @ plus).sum() - np.tanh(x.data @ minus).sum()) / (2 * eps)
print("max |autodiff - numeric| =", np.abs(w.grad - numeric).max())

# %% image ops: conv -> instance norm -> relu -> global max pool
img = Tensor(rng.normal(size=(2, 3, 8, 8)), requires_grad=True, dtype=np.float64)
kernel = Tensor(rng.normal(size=(4, 3, 3, 3)) * 0.3, requires_grad=True, dtype=np.float64)
feat = ops.global_max_pool(ops.instance_norm(ops.conv2d(img, kernel, stride=2, padding=1)).relu())
emb = ops.l2_normalize(feat, axis=1)
print("embedding rows have unit norm:", np.round(np.linalg.norm(emb.data, axis=1), 6))
emb.sum().backward()
print("image gradient shape:", img.grad.shape, "kernel gradient norm:", round(float(np.linalg.norm(kernel.grad)), 4))

# %% Adam on a quadratic bowl
p = Tensor(np.array([3.0, -2.0]), requires_grad=True, dtype=np.float64)
opt = Adam([p], lr=0.1)
for step in range(300):
    opt.zero_grad()
    ((p - Tensor(np.array([1.0, 1.0]))) ** 2).sum().backward()
    opt.step()
print("Adam minimiser after 300 steps:", np.round(p.data, 4))
