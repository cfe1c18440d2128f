"""The shared-backbone multi-task network and its gradient-blocking switch.

One encoder feeds both branches. With blocking on, the segmentation loss
can only update the deepest residual stage and the segmentation head; the
stages the detector depends on receive exactly zero segmentation gradient.
"""

import numpy as np

from perceptkit import ndgrad as ng
from perceptkit.losses import segmentation_loss
from perceptkit.network import PerceptionNet

net = PerceptionNet(preset="mini", seed=0, dtype=np.float64)
image = ng.Tensor(np.random.default_rng(1).normal(size=(1, 3, 128, 256)))

out = net(image, block_gradients=True)
print("detection logits:", out.class_logits.shape, " regressors:", out.regressors.shape)
print("segmentation logits:", out.seg_logits.shape, " (quarter resolution)")

mask = np.zeros((1, 32, 64), dtype=np.int64)
loss = segmentation_loss(out.seg_logits, mask)
net.zero_grad()
loss.backward()

blocked = set(net.seg_blocked_parameter_names())
leaks = 0
stage4_nonzero = 0
for name, p in net.named_parameters():
    if name in blocked and p.grad.any():
        leaks += 1
    if name.startswith("encoder.stage4") and p.grad.any():
        stage4_nonzero += 1
print(f"\nsegmentation loss backward with blocking on:")
print(f"  blocked encoder parameters with nonzero grad: {leaks} (expect 0)")
print(f"  res5-stage parameters with nonzero grad: {stage4_nonzero} (trainable by design)")

out_open = net(image, block_gradients=False)
net.zero_grad()
segmentation_loss(out_open.seg_logits, mask).backward()
stem = dict(net.named_parameters())["encoder.stem.conv.weight"]
print(f"\nwith blocking off the stem sees gradient: {bool(stem.grad.any())}")
