"""Pinhole-consistent synthetic scenes and the distance ground-truth chain.

Each generated object is planted at a known distance; its on-image size is
f * real_size / distance and the disparity inside it is b * f / distance,
so the median-filter recovery can be checked end to end, with and without
disparity noise.
"""

from perceptkit.dataio import (
    CameraModel,
    DEFAULT_REGISTRY,
    box_distance_gt,
    save_dataset,
    synth_generate,
)

scenes = synth_generate(seed=7, count=3, size=(256, 128))
cam = scenes[0].camera
print(f"camera: baseline {cam.b} m, focal {cam.f} px\n")

for scene in scenes:
    print(f"scene {scene.scene_id}: {len(scene.boxes)} objects")
    for b in scene.boxes:
        name = DEFAULT_REGISTRY.det_name(b.class_id)
        recovered = box_distance_gt(scene, b)
        print(
            f"  {name:<11} {b.w:5.1f}x{b.h:5.1f} px  planted {b.depth_m:6.2f} m"
            f"  recovered {recovered:6.2f} m  (exact: {recovered == b.depth_m})"
        )

print("\n== median robustness under disparity corruption ==")
noisy = synth_generate(
    seed=7, count=20, size=(256, 128), salt_fraction=0.1, invalid_fraction=0.2
)
errs = []
for scene in noisy:
    for b in scene.boxes:
        got = box_distance_gt(scene, b)
        if got is not None:
            errs.append(abs(got - b.depth_m) / b.depth_m)
print(
    f"20% invalidated + 10% salted pixels over {len(errs)} boxes: "
    f"worst relative error {max(errs):.4f}"
)

out = "/tmp/perceptkit_demo_dataset"
save_dataset(scenes, out)
print(f"\nwrote the demo scenes to {out}/scenes (ppm/pgm/f32/txt)")
