"""Training loop: augmentation, multi-task loss, momentum updates with the
multi-factor schedule, CSV loss log, periodic checkpoints.

Fully reproducible from (config, seed): every random draw comes from seed
sequences spawned off the run seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import ndgrad as ng
from .augment import apply_augmentation, draw_params, filter_small_boxes
from .checkpoint import save_checkpoint
from .config import RunConfig
from .dataio import Scene, load_dataset, subsample_mask
from .losses import (
    LossReport,
    build_prior_targets,
    detection_loss,
    segmentation_loss,
    total_loss,
)
from .network import PerceptionNet, normalize_image


class TrainingNumericsError(RuntimeError):
    """A loss component became non-finite."""


@dataclass
class TrainResult:
    net: PerceptionNet
    steps: int
    loss_log: Path
    checkpoint: Path
    last_report: Optional[LossReport]


def _augment_scene(scene: Scene, config: RunConfig, epoch: int, index: int) -> Scene:
    if not config.augment:
        return scene
    seed = int(
        np.random.SeedSequence((config.seed, epoch, index)).generate_state(1)[0]
    )
    out = apply_augmentation(scene, draw_params(seed))
    out.boxes = filter_small_boxes(out.boxes)
    return out


def train(config: RunConfig, scenes: Optional[Sequence[Scene]] = None) -> TrainResult:
    config.validate()
    if scenes is None:
        scenes = load_dataset(config.dataset)
    if not scenes:
        raise ValueError(f"no scenes to train on (dataset {config.dataset!r})")
    w, h = scenes[0].size
    if w % 32 or h % 32:
        raise ValueError(f"scene extents must be divisible by 32, got {w}x{h}")

    net = PerceptionNet(
        preset=config.preset,
        num_det_classes=config.num_det_classes,
        num_seg_classes=config.num_seg_classes,
        seed=config.seed,
    )
    net.train()
    priors = net.priors_for((w, h))
    optimizer = ng.SGD(net.parameters(), lr=config.lr, momentum=config.momentum)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "loss_log.csv"
    ckpt_path = out_dir / "checkpoint.ndckpt"

    order_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0xE90C)))
    step = 0
    last_report = None
    with open(log_path, "w", newline="") as log_file:
        log = csv.writer(log_file)
        log.writerow(["step", "l_cls", "l_reg", "l_seg", "total"])
        for epoch in range(config.epochs):
            optimizer.lr = config.lr_at_epoch(epoch)
            indices = order_rng.permutation(len(scenes))
            for start in range(0, len(indices), config.batch_size):
                batch_idx = indices[start : start + config.batch_size]
                batch = [
                    _augment_scene(scenes[i], config, epoch, int(i)) for i in batch_idx
                ]
                images = np.stack([normalize_image(s.image) for s in batch])
                boxes = [s.boxes for s in batch]
                masks = np.stack([subsample_mask(s.mask, 4) for s in batch]).astype(
                    np.int64
                )
                targets = build_prior_targets(priors, boxes, (w, h))

                out = net(ng.Tensor(images), block_gradients=config.block_gradients)
                l_cls, l_reg, n_matched = detection_loss(
                    out.class_logits, out.regressors, targets
                )
                l_seg = segmentation_loss(out.seg_logits, masks)
                loss = total_loss(l_cls, l_reg, l_seg, w_seg=config.w_seg)

                report = LossReport(
                    l_cls=float(l_cls.data),
                    l_reg=float(l_reg.data),
                    l_seg=float(l_seg.data),
                    w_seg=config.w_seg,
                    n_matched=n_matched,
                )
                for name, value in (
                    ("l_cls", report.l_cls),
                    ("l_reg", report.l_reg),
                    ("l_seg", report.l_seg),
                ):
                    if not np.isfinite(value):
                        raise TrainingNumericsError(
                            f"loss component {name} became {value} at step {step}"
                        )
                net.zero_grad()
                loss.backward()
                optimizer.step()
                step += 1
                last_report = report
                log.writerow(
                    [
                        step,
                        f"{report.l_cls:.6f}",
                        f"{report.l_reg:.6f}",
                        f"{report.l_seg:.6f}",
                        f"{report.total:.6f}",
                    ]
                )
                if config.save_every and step % config.save_every == 0:
                    save_checkpoint(net, ckpt_path)
                if config.max_steps and step >= config.max_steps:
                    save_checkpoint(net, ckpt_path)
                    return TrainResult(net, step, log_path, ckpt_path, last_report)
    save_checkpoint(net, ckpt_path)
    return TrainResult(net, step, log_path, ckpt_path, last_report)
