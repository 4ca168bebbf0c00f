"""Tour of the tensor/autodiff core.

Build small graphs from the primitives, run reverse-mode backward, and
verify gradients against central finite differences.
"""

import numpy as np

from dkd import tensor as tz
from dkd.gradcheck import grad_check, run_primitive_checks
from dkd.tensor import Tensor

# forward arithmetic: a tiny affine -> gelu -> mean pipeline
x = Tensor(np.linspace(-1, 1, 8).reshape(2, 4), requires_grad=True)
w = Tensor(np.full((4, 3), 0.25), requires_grad=True)
b = Tensor(np.zeros(3), requires_grad=True)
y = tz.mean(tz.gelu(tz.add(tz.matmul(x, w), b)))
print("forward value:", y.item())

# one backward call populates every requires-grad ancestor
tz.backward(y)
print("dy/dx row 0:", np.round(x.grad[0], 4))
print("dy/db:", np.round(b.grad, 4))

# fan-out accumulates: d(x*x)/dx = 2x
z = Tensor(np.array([[3.0]]), requires_grad=True)
tz.backward(tz.sum_(tz.mul(z, z)))
print("d(z*z)/dz at 3:", z.grad.ravel())

# the verification harness runs in the 64-bit mode
with tz.use_dtype("float64"):
    rep = grad_check(lambda t: tz.sum_(tz.gelu(t)), np.linspace(-2, 2, 10), step=1e-5)
print(f"gelu-sum gradcheck: max rel err {rep.max_rel_err:.2e} over {rep.n_elements} elements")

# and the same harness covers every primitive at three shapes each
results = run_primitive_checks(seed=0)
worst = max(results.values(), key=lambda r: r.max_rel_err)
print(f"{len(results)} primitives checked; worst max rel err {worst.max_rel_err:.2e}")
