"""Tour of the ndgrad substrate: tensors, operators, gradient checking.

Every network in this package runs on these few operators, and each one's
backward pass can be verified against central finite differences.
"""

import numpy as np

from perceptkit import ndgrad as ng

print("== forward basics ==")
x = ng.Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True, dtype=np.float64)
y = (x * x).sum()
y.backward()
print("sum(x^2) =", float(y.data), " grad =", x.grad.tolist(), " (expect 2x)")

print("\n== convolution against a hand kernel ==")
image = ng.Tensor(np.arange(9.0).reshape(1, 1, 3, 3), dtype=np.float64)
box_filter = ng.Tensor(np.ones((1, 1, 3, 3)) / 9.0, dtype=np.float64)
blurred = ng.conv2d(image, box_filter, stride=1, pad=0)
print("3x3 mean of 0..8 ->", float(blurred.data), " (expect 4.0)")

print("\n== bilinear-initialized upsampling ==")
kern = ng.bilinear_kernel(2, channels=1)
print("factor-2 tent taps:", kern.data[0, 0, 0].tolist())
ramp = ng.Tensor(np.arange(6.0)[None, None, None, :].repeat(4, axis=2), dtype=np.float64)
up = ng.deconv2d(ramp, ng.Tensor(kern.data.astype(np.float64)), stride=2)
print("upsampled ramp row (interior):", np.round(up.data[0, 0, 2, 2:-2], 3).tolist())
print("-> linear with half the slope per output pixel")

print("\n== stop_gradient ==")
v = ng.Tensor([3.0], requires_grad=True, dtype=np.float64)
prod = (v * ng.stop_gradient(v)).sum()
prod.backward()
print("d(v * sg(v))/dv at v=3:", v.grad[0], " (3, not 6: one factor is frozen)")

print("\n== finite-difference verification ==")
rng = np.random.default_rng(0)
xx = ng.Tensor(rng.normal(size=(1, 2, 5, 5)), requires_grad=True, dtype=np.float64)
ww = ng.Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True, dtype=np.float64)
err = ng.check_gradients(lambda: ng.conv2d(xx, ww, stride=2, pad=1).sum(), [xx, ww])
print(f"conv2d analytic vs numeric gradient: max relative error {err:.2e}")
