"""Closed-form ridge prototypes on a toy problem.

Run with ``python3 demos/ridge_prototypes.py``.
"""

import numpy as np

from ridgeproto import tensor as T
from ridgeproto.linalg import ridge_loss, ridge_solve
from ridgeproto.tensor import Tensor

rng = np.random.default_rng(0)

# four samples in a 6-dim feature space, each paired with a 3-dim attribute vector
phi = rng.normal(size=(6, 4))
attrs = rng.normal(size=(3, 4))

for lam in (0.01, 1.0, 100.0, 1e6):
    w = ridge_solve(Tensor(phi), attrs, Tensor([lam])).data
    print(f"lam={lam:<8g} |W|={np.linalg.norm(w):.4f}  objective={ridge_loss(phi, attrs, w, lam):.4f}")

# the solver is differentiable in both phi and lambda
phi_t = Tensor(phi, requires_grad=True)
lam_t = Tensor([0.5], requires_grad=True)
with T.Tape():
    w = ridge_solve(phi_t, attrs, lam_t)
    T.backward(T.sum(T.mul(w, w)))
print("d|W|^2/dlam =", float(lam_t.grad[0]))
print("d|W|^2/dphi column norms:", np.round(np.linalg.norm(phi_t.grad, axis=0), 4))
