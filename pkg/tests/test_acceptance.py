"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines and timings.
"""

import math
import time

import numpy as np
import pytest

from perceptkit import ndgrad as ng
from perceptkit.augment import AugmentParams, apply_augmentation, draw_params
from perceptkit.config import RunConfig
from perceptkit.dataio import (
    CameraModel,
    Scene,
    SceneBox,
    box_distance_gt,
    distance_from_disparity,
    synth_generate,
)
from perceptkit.detect import PriorBox, decode_detection, encode_target, generate_priors
from perceptkit.evalkit import (
    CDF_GRID,
    DetRecord,
    GtRecord,
    average_precision,
    distance_error,
    error_cdf,
    segmentation_scores,
)
from perceptkit.inference import evaluate_scenes
from perceptkit.losses import (
    build_prior_targets,
    detection_loss,
    segmentation_loss,
    total_loss,
)
from perceptkit.network import PerceptionNet, normalize_image
from perceptkit.trainer import train
from oracles import average_precision_bruteforce, cdf_by_counting, confusion_by_pixels


def report(criterion: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"\n[ACCEPTANCE] {criterion}: {status}" + (f"  ({detail})" if detail else ""))
    assert ok, f"{criterion}: {detail}"


def test_criterion_1_prior_box_count():
    t0 = time.time()
    priors = generate_priors((1024, 512))
    elapsed = time.time() - t0
    ok = len(priors) == 12264 and elapsed < 1.0
    report(
        "criterion 1 (prior count 12,264 at 1024x512)",
        ok,
        f"{len(priors)} priors in {elapsed:.3f}s",
    )


def test_criterion_2_segmentation_output_size():
    t0 = time.time()
    net = PerceptionNet(preset="mini", seed=0).eval()
    img = ng.Tensor(np.zeros((1, 3, 512, 1024), dtype=np.float32))
    logits = net(img).seg_logits
    elapsed = time.time() - t0
    shape = logits.data.shape
    positions = shape[2] * shape[3]
    ok = shape == (1, 19, 128, 256) and positions == 32768 and elapsed < 30.0
    report(
        "criterion 2 (seg logits 256x128 = 32,768 positions)",
        ok,
        f"shape {shape}, {positions} positions in {elapsed:.1f}s",
    )


def _gradcheck_cases():
    """(name, seed) -> scalar fn plus its inputs; >= 3 shapes per operator."""
    cases = []

    def add_case(name, builder, seeds):
        for s in seeds:
            cases.append((name, s, builder))

    def conv_case(seed):
        rng = np.random.default_rng(seed)
        shape = [(1, 2, 5, 5), (2, 3, 6, 6), (1, 1, 4, 7)][seed % 3]
        stride, pad = [(1, 0), (2, 1), (1, 1)][seed % 3]
        x = ng.Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)
        w = ng.Tensor(rng.normal(size=(3, shape[1], 3, 3)), requires_grad=True, dtype=np.float64)
        b = ng.Tensor(rng.normal(size=3), requires_grad=True, dtype=np.float64)
        return lambda: ng.conv2d(x, w, b, stride=stride, pad=pad).sum(), [x, w, b]

    add_case("conv2d", conv_case, (0, 1, 2))

    def deconv_case(seed):
        rng = np.random.default_rng(seed)
        c, f = [(2, 2), (1, 3), (3, 4)][seed % 3]
        size = 2 * f - f % 2
        x = ng.Tensor(rng.normal(size=(1, c, 3, 4)), requires_grad=True, dtype=np.float64)
        w = ng.Tensor(rng.normal(size=(c, 1, size, size)), requires_grad=True, dtype=np.float64)
        return lambda: ng.deconv2d(x, w, stride=f).sum(), [x, w]

    add_case("deconv2d_depthwise", deconv_case, (3, 4, 5))

    def deconv_dense_case(seed):
        rng = np.random.default_rng(seed)
        cin, cout = [(2, 3), (1, 2), (3, 1)][seed % 3]
        x = ng.Tensor(rng.normal(size=(1, cin, 3, 3)), requires_grad=True, dtype=np.float64)
        w = ng.Tensor(rng.normal(size=(cin, cout, 4, 4)), requires_grad=True, dtype=np.float64)
        return lambda: ng.deconv2d(x, w, stride=2).sum(), [x, w]

    add_case("deconv2d_dense", deconv_dense_case, (6, 7, 8))

    def pool_case(seed):
        rng = np.random.default_rng(seed)
        shape, k, s = [((1, 2, 6, 6), 2, 2), ((2, 1, 5, 5), 3, 1), ((1, 3, 8, 4), 2, 1)][seed % 3]
        x = ng.Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)
        return lambda: ng.avgpool2d(x, k, s).sum(), [x]

    add_case("avgpool2d", pool_case, (9, 10, 11))

    def relu_case(seed):
        rng = np.random.default_rng(seed)
        shape = [(7,), (2, 5), (1, 2, 3, 3)][seed % 3]
        data = rng.normal(size=shape)
        data += np.where(np.abs(data) < 0.05, 0.2, 0.0)
        x = ng.Tensor(data, requires_grad=True, dtype=np.float64)
        return lambda: (ng.relu(x) * 2.0).sum(), [x]

    add_case("relu", relu_case, (12, 13, 14))

    def addmul_case(seed):
        rng = np.random.default_rng(seed)
        sa, sb = [((3, 4), (3, 4)), ((2, 3), (1, 3)), ((5,), ())][seed % 3]
        a = ng.Tensor(rng.normal(size=sa), requires_grad=True, dtype=np.float64)
        b = ng.Tensor(rng.normal(size=sb), requires_grad=True, dtype=np.float64)
        return lambda: ((a + b) * (a * b + 2.0)).sum(), [a, b]

    add_case("add_mul", addmul_case, (15, 16, 17))

    def concat_case(seed):
        rng = np.random.default_rng(seed)
        shapes = [
            [(1, 2, 3, 3), (1, 1, 3, 3)],
            [(1, 1, 2, 2), (1, 2, 2, 2), (1, 3, 2, 2)],
            [(2, 2, 2, 2), (2, 2, 2, 2)],
        ][seed % 3]
        parts = [ng.Tensor(rng.normal(size=s), requires_grad=True, dtype=np.float64) for s in shapes]
        return lambda: (ng.concat(parts, axis=1) * 0.5).sum(), parts

    add_case("concat", concat_case, (18, 19, 20))

    def bn_case(seed):
        rng = np.random.default_rng(seed)
        shape = [(3, 2, 4, 4), (2, 3, 5, 5), (4, 1, 3, 3)][seed % 3]
        training = seed % 2 == 0
        x = ng.Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)
        gamma = ng.Tensor(rng.normal(size=shape[1]), requires_grad=True, dtype=np.float64)
        beta = ng.Tensor(rng.normal(size=shape[1]), requires_grad=True, dtype=np.float64)
        rm = rng.normal(size=shape[1])
        rv = rng.uniform(0.5, 2.0, size=shape[1])
        return (
            lambda: ng.batch_norm(x, gamma, beta, rm.copy(), rv.copy(), training=training).sum(),
            [x, gamma, beta],
        )

    add_case("batch_norm", bn_case, (21, 22, 23))

    def resize_case(seed):
        rng = np.random.default_rng(seed)
        shape, f = [((1, 2, 3, 3), 2), ((1, 1, 4, 2), 3), ((2, 2, 2, 2), 4)][seed % 3]
        x = ng.Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)
        return lambda: (ng.resize_nearest(x, f) * 1.25).sum(), [x]

    add_case("resize_nearest", resize_case, (24, 25, 26))

    def bilinear_case(seed):
        rng = np.random.default_rng(seed)
        shape, out = [((1, 2, 3, 3), (6, 6)), ((1, 1, 4, 2), (8, 8)), ((2, 2, 2, 3), (5, 7))][seed % 3]
        x = ng.Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)
        return lambda: (ng.resize_bilinear(x, *out) * 0.75).sum(), [x]

    add_case("resize_bilinear", bilinear_case, (27, 28, 29))

    def reshape_case(seed):
        rng = np.random.default_rng(seed)
        shape, new = [((2, 6), (12,)), ((1, 2, 3, 4), (6, 4)), ((8,), (2, 2, 2))][seed % 3]
        x = ng.Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)
        return lambda: (x.reshape(*new) * x.reshape(*new)).sum(), [x]

    add_case("reshape", reshape_case, (30, 31, 32))

    def slice_case(seed):
        rng = np.random.default_rng(seed)
        index = [np.s_[1:3], np.s_[:, 1], np.s_[::2, :2]][seed % 3]
        x = ng.Tensor(rng.normal(size=(4, 4)), requires_grad=True, dtype=np.float64)
        return lambda: (x[index] * 3.0).sum(), [x]

    add_case("slice", slice_case, (33, 34, 35))

    def gather_case(seed):
        rng = np.random.default_rng(seed)
        rows = np.array([[0, 2, 2], [1, 1, 1], [3, 0, 3]][seed % 3])
        x = ng.Tensor(rng.normal(size=(4, 3)), requires_grad=True, dtype=np.float64)
        return lambda: (ng.gather_rows(x, rows) * 0.5).sum(), [x]

    add_case("gather_rows", gather_case, (36, 37, 38))

    def transpose_case(seed):
        rng = np.random.default_rng(seed)
        shape, axes = [((2, 3, 4), (2, 0, 1)), ((1, 2, 3, 4), (0, 3, 1, 2)), ((3, 4), (1, 0))][seed % 3]
        x = ng.Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)
        return lambda: (ng.transpose(x, axes) * x.sum() * 0.1).sum(), [x]

    add_case("transpose", transpose_case, (39, 40, 41))

    def ce_case(seed):
        rng = np.random.default_rng(seed)
        n, c = [(4, 5), (6, 3), (2, 11)][seed % 3]
        x = ng.Tensor(rng.normal(size=(n, c)), requires_grad=True, dtype=np.float64)
        targets = rng.integers(0, c, size=n)
        if seed % 3 == 1:
            targets[::2] = 255
        return lambda: ng.softmax_cross_entropy(x, targets, ignore_label=255), [x]

    add_case("softmax_cross_entropy", ce_case, (42, 43, 44))

    def sl1_case(seed):
        rng = np.random.default_rng(seed)
        shape = [(6,), (3, 5), (2, 2, 4)][seed % 3]
        data = rng.normal(size=shape) * 2.0
        data += np.where(np.abs(np.abs(data) - 1.0) < 0.05, 0.2, 0.0)
        x = ng.Tensor(data, requires_grad=True, dtype=np.float64)
        target = ng.Tensor(rng.normal(size=shape) * 0.1)
        return lambda: ng.smooth_l1(x, target), [x]

    add_case("smooth_l1", sl1_case, (45, 46, 47))

    def summean_case(seed):
        rng = np.random.default_rng(seed)
        shape = [(5,), (2, 3), (2, 2, 2)][seed % 3]
        x = ng.Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)
        return lambda: (x * x).mean() + x.sum() * 0.25, [x]

    add_case("sum_mean", summean_case, (48, 49, 50))
    return cases


def test_criterion_3_gradient_soundness():
    t0 = time.time()
    worst = 0.0
    worst_name = ""
    ops = set()
    for name, seed, builder in _gradcheck_cases():
        fn, inputs = builder(seed)
        err = ng.check_gradients(fn, inputs, step=1e-5, tol=1e-4)
        ops.add(name)
        if err > worst:
            worst, worst_name = err, name
    elapsed = time.time() - t0
    ok = worst < 1e-4 and elapsed < 120.0
    report(
        "criterion 3 (finite-difference gradient soundness)",
        ok,
        f"{len(ops)} operators x 3 shapes, worst {worst:.2e} ({worst_name}) in {elapsed:.1f}s",
    )


def test_criterion_4_gradient_block_contract():
    net = PerceptionNet(preset="mini", seed=11, dtype=np.float64)
    net.eval()  # eval-mode forward keeps the two passes bit-comparable
    scene = synth_generate(seed=21, count=1, size=(128, 128))[0]
    w, h = scene.size
    images = normalize_image(scene.image, dtype=np.float64)[None]
    priors = net.priors_for((w, h))
    targets = build_prior_targets(priors, [scene.boxes], (w, h))
    mask = scene.mask[::4, ::4].astype(np.int64)[None]
    blocked = set(net.seg_blocked_parameter_names())
    params = dict(net.named_parameters())

    def forward_losses():
        out = net(ng.Tensor(images), block_gradients=True)
        l_cls, l_reg, _ = detection_loss(out.class_logits, out.regressors, targets)
        l_seg = segmentation_loss(out.seg_logits, mask)
        return l_cls, l_reg, l_seg

    # detection-only reference gradient on the blocked set
    net.zero_grad()
    l_cls, l_reg, _ = forward_losses()
    (l_cls + l_reg).backward()
    det_grads = {n: params[n].grad.copy() for n in blocked}

    max_dev = 0.0
    seg_all_zero = True
    for w_seg in (1.0, 4.0, 10.0):
        net.zero_grad()
        _, _, l_seg = forward_losses()
        (l_seg * w_seg).backward()
        for n in blocked:
            if params[n].grad.any():
                seg_all_zero = False
        net.zero_grad()
        l_cls, l_reg, l_seg = forward_losses()
        total_loss(l_cls, l_reg, l_seg, w_seg=w_seg).backward()
        for n in blocked:
            dev = np.abs(params[n].grad - det_grads[n]).max()
            max_dev = max(max_dev, float(dev))
    ok = seg_all_zero and max_dev < 1e-12
    report(
        "criterion 4 (segmentation gradient blocking)",
        ok,
        f"seg-only grads zero: {seg_all_zero}, total-vs-detection max dev {max_dev:.2e}",
    )


def test_criterion_5_augmentation_depth_laws():
    rot_flip_ok = True
    scenes = [synth_generate(seed=s, count=1, size=(128, 64))[0] for s in range(5)]
    rng = np.random.default_rng(99)
    for draw in range(500):
        scene = scenes[draw % len(scenes)]
        params = AugmentParams(
            flip=bool(rng.random() < 0.5),
            angle_deg=float(rng.uniform(-5, 5)),
            scale_x=1.0,
            scale_y=1.0,
            seed=draw,
        )
        out = apply_augmentation(scene, params)
        source_depths = {b.depth_m for b in scene.boxes}
        if any(b.depth_m not in source_depths for b in out.boxes):
            rot_flip_ok = False
            break

    resize_ok = True
    base_box = SceneBox(3, 56.0, 24.0, 16.0, 16.0, 10.0)
    base = Scene(
        image=np.zeros((64, 128, 3), dtype=np.uint8),
        boxes=[base_box],
        mask=np.zeros((64, 128), dtype=np.uint8),
        disparity=np.ones((64, 128), dtype=np.float32),
        camera=CameraModel(b=0.22, f=100.0),
    )
    for draw in range(500):
        s = float(rng.integers(16, 65)) / 32.0  # exact factors on /32 extents
        out = apply_augmentation(base, AugmentParams(False, 0.0, s, s, draw))
        if len(out.boxes) != 1:
            continue  # box fully clipped by the restore crop
        b = out.boxes[0]
        if abs(b.depth_m - base_box.depth_m / s) > 1e-9 * base_box.depth_m:
            resize_ok = False
            break
        if b.w == pytest.approx(base_box.w * s, rel=1e-9):
            if abs(b.h * b.depth_m - base_box.h * base_box.depth_m) > 1e-6:
                resize_ok = False
                break
    ok = rot_flip_ok and resize_ok
    report(
        "criterion 5 (augmentation depth laws over 1,000 draws)",
        ok,
        f"rotation/flip invariance: {rot_flip_ok}, resize scaling law: {resize_ok}",
    )


def test_criterion_6_ground_truth_pipeline():
    cam_a = CameraModel(b=0.2, f=2000.0)
    eq1_ok = (
        distance_from_disparity(cam_a, 100.0) == 4.0
        and abs(distance_from_disparity(CameraModel(0.22, 2262.0), 62.205) - 8.0) < 1e-9
    )
    try:
        distance_from_disparity(cam_a, 0.0)
        eq1_ok = False
    except ValueError:
        pass
    eq2_ok = (
        distance_error(11.0, 10.0) == pytest.approx(0.1)
        and distance_error(8.0, 10.0) == pytest.approx(0.2)
        and distance_error(10.0, 10.0) == 0.0
    )

    clean_worst = 0.0
    scenes = synth_generate(seed=31, count=100, size=(128, 64))
    for scene in scenes:
        for box in scene.boxes:
            got = box_distance_gt(scene, box)
            clean_worst = max(clean_worst, abs(got - box.depth_m) / box.depth_m)

    noisy_worst = 0.0
    noisy = synth_generate(
        seed=31, count=100, size=(128, 64), salt_fraction=0.1, invalid_fraction=0.2
    )
    n_checked = 0
    for scene in noisy:
        for box in scene.boxes:
            got = box_distance_gt(scene, box)
            if got is None:
                continue
            noisy_worst = max(noisy_worst, abs(got - box.depth_m) / box.depth_m)
            n_checked += 1
    ok = eq1_ok and eq2_ok and clean_worst == 0.0 and noisy_worst < 0.05 and n_checked > 100
    report(
        "criterion 6 (distance ground-truth pipeline)",
        ok,
        f"clean worst {clean_worst:.2e}, noisy worst {noisy_worst:.3f} over {n_checked} boxes",
    )


def test_criterion_7_metric_oracle_equivalence():
    rng = np.random.default_rng(123)
    ap_dev = cdf_dev = iou_dev = 0.0
    for _ in range(50):
        n_det = int(rng.integers(1, 21))
        n_gt = int(rng.integers(1, 7))
        gts = [
            GtRecord("i", 1, tuple(rng.uniform(0, 80, 2)) + tuple(rng.uniform(5, 30, 2)))
            for _ in range(n_gt)
        ]
        dets = [
            DetRecord("i", 1, float(rng.uniform(0.01, 1)), tuple(rng.uniform(0, 80, 2)) + tuple(rng.uniform(5, 30, 2)))
            for _ in range(n_det)
        ]
        got = average_precision(dets, gts, 0.5, 100.0)[1]
        ref = average_precision_bruteforce(
            [(d.image_id, d.score, d.box) for d in dets],
            [(g.image_id, g.box) for g in gts],
            0.5,
            100.0,
        )
        ap_dev = max(ap_dev, abs(got - ref))

        errors = rng.uniform(0, 1.4, size=int(rng.integers(2, 50)))
        cdf_dev = max(
            cdf_dev,
            float(np.abs(error_cdf(errors) - cdf_by_counting(list(errors), CDF_GRID)).max()),
        )

        pred = rng.integers(0, 5, size=(16, 16)).astype(np.uint8)
        gt = rng.integers(0, 5, size=(16, 16)).astype(np.uint8)
        gt[rng.random((16, 16)) < 0.1] = 255
        per, _, acc = segmentation_scores([pred], [gt], 5)
        cm = confusion_by_pixels(pred, gt, 5)
        for c in range(5):
            tp = cm[c, c]
            denom = cm[c].sum() + cm[:, c].sum() - tp
            expected = tp / denom if denom else 0.0
            iou_dev = max(iou_dev, abs(per[c] - expected))
        iou_dev = max(iou_dev, abs(acc - np.trace(cm) / cm.sum()))
    ok = ap_dev < 1e-10 and cdf_dev < 1e-10 and iou_dev < 1e-10
    report(
        "criterion 7 (metric oracle equivalence over 50 instances)",
        ok,
        f"AP dev {ap_dev:.1e}, CDF dev {cdf_dev:.1e}, IoU dev {iou_dev:.1e}",
    )


def test_criterion_8_end_to_end_overfit(tmp_path):
    t0 = time.time()
    scenes = synth_generate(seed=42, count=8, size=(256, 128))
    config = RunConfig(
        preset="mini",
        input_w=256,
        input_h=128,
        lr=0.01,
        lr_milestones=(100, 200),
        epochs=10000,
        batch_size=2,
        w_seg=4.0,  # default loss weights
        seed=0,
        augment=False,
        block_gradients=True,
        out_dir=str(tmp_path / "overfit"),
        max_steps=800,
    )
    result = train(config, scenes=scenes)
    net = result.net.eval()
    acc = evaluate_scenes(net, scenes, num_seg_classes=19, score_threshold=0.3)
    rep = acc.report()
    errors = [e for _, e in acc.depth_errors]
    mean_err = float(np.mean(errors)) if errors else float("inf")
    elapsed = time.time() - t0
    ok = (
        result.steps <= 2000
        and rep.mean_ap >= 0.9
        and mean_err <= 0.10
        and rep.pixel_accuracy >= 0.90
        and elapsed <= 900.0
    )
    report(
        "criterion 8 (end-to-end overfit on 8 scenes)",
        ok,
        f"steps {result.steps}, mAP {rep.mean_ap:.3f}, depth err {mean_err:.3f}, "
        f"pixel acc {rep.pixel_accuracy:.3f}, {elapsed:.0f}s",
    )


def test_criterion_9_codec_roundtrip():
    rng = np.random.default_rng(314)
    worst_box = worst_depth = 0.0
    for _ in range(10000):
        prior = PriorBox(
            float(rng.uniform(0.2, 0.8)),
            float(rng.uniform(0.2, 0.8)),
            float(rng.uniform(0.05, 0.5)),
            float(rng.uniform(0.05, 0.5)),
            depth_ref=float(rng.uniform(10, 400)),
        )
        gt = (
            float(rng.uniform(0.2, 0.8)),
            float(rng.uniform(0.2, 0.8)),
            float(rng.uniform(0.02, 0.5)),
            float(rng.uniform(0.02, 0.5)),
        )
        depth = float(rng.uniform(0.5, 300.0))
        t = encode_target(prior, gt, depth, class_id=1)
        det = decode_detection(prior, t.offsets(), np.array([0.0, 1.0]), (1, 1))
        worst_box = max(
            worst_box,
            abs(det.x - (gt[0] - gt[2] / 2)),
            abs(det.y - (gt[1] - gt[3] / 2)),
            abs(det.w - gt[2]),
            abs(det.h - gt[3]),
        )
        worst_depth = max(worst_depth, abs(det.depth_m - depth) / depth)
    ok = worst_box < 1e-6 and worst_depth < 1e-6
    report(
        "criterion 9 (codec roundtrip over 10,000 triples)",
        ok,
        f"worst box dev {worst_box:.2e}, worst depth rel dev {worst_depth:.2e}",
    )
