"""Prior-box geometry, target assignment, and the box+depth codec.

The default six-level layout (strides 16..512, 4/6/6/6/4/4 anchors per
cell) tiles exactly 12,264 priors over a 1024x512 input. Matched priors are
encoded as (dx, dy, dw, dh, dd) where dd is the log ratio of the ground
truth distance to the layer's depth reference.
"""

import math

import numpy as np

from perceptkit.detect import (
    AnchorConfig,
    PriorBox,
    decode_detection,
    encode_target,
    generate_priors,
    match_anchors,
)

print("== prior layout at 1024x512 ==")
cfg = AnchorConfig.default((1024, 512))
total = 0
for layer in cfg.layers:
    n = layer.grid_w * layer.grid_h * layer.anchors_per_cell
    total += n
    print(
        f"stride {layer.stride:>3}: grid {layer.grid_w:>2}x{layer.grid_h:<2} "
        f"x {layer.anchors_per_cell} anchors = {n:>5}   depth ref {layer.depth_ref:.0f} m"
    )
print(f"total priors: {total}\n")

print("== matching ==")
priors = generate_priors((512, 256))
gt = np.array([[0.31, 0.52, 0.18, 0.24]])  # one normalized box
assign = match_anchors(priors, gt)
matched = np.nonzero(assign >= 0)[0]
print(f"{len(matched)} of {len(priors)} priors matched the box: {matched.tolist()}")

print("\n== encode / decode roundtrip ==")
prior = PriorBox(0.3, 0.5, 0.2, 0.25, depth_ref=20.0)
target = encode_target(prior, (0.31, 0.52, 0.18, 0.24), gt_depth_m=14.0, class_id=3)
print("offsets:", [round(float(v), 4) for v in target.offsets()])
print(f"dd = ln(14/20) = {math.log(14 / 20):.4f}")
det = decode_detection(prior, target.offsets(), np.array([0.0, 0.0, 0.0, 9.0]), (512, 256))
print(
    f"decoded: class {det.class_id}, box ({det.x:.1f}, {det.y:.1f}, "
    f"{det.w:.1f}, {det.h:.1f}) px, depth {det.depth_m:.2f} m"
)
