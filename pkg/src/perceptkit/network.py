"""Full multi-task network: shared encoder + detection branch + segmentation branch."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .detect import AnchorConfig, DetectionHead, PriorBox, generate_priors
from .encoder import Encoder, EncoderConfig, FeaturePyramid
from .ndgrad import Module, Tensor
from .seghead import SegConfig, SegHead

IMAGE_MEAN = 0.5  # images are scaled to [0, 1] then centered


@dataclass
class NetOutputs:
    class_logits: Tensor  # (N, P, num_classes + 1)
    regressors: Tensor  # (N, P, 5)
    seg_logits: Tensor  # (N, seg_classes, H/4, W/4)
    pyramid: FeaturePyramid


class PerceptionNet(Module):
    def __init__(
        self,
        preset: str = "mini",
        num_det_classes: int = 10,
        num_seg_classes: int = 19,
        seed: int = 0,
        dtype=np.float32,
    ):
        super().__init__()
        self.preset = preset
        self.num_det_classes = num_det_classes
        self.num_seg_classes = num_seg_classes
        enc_cfg = EncoderConfig.from_preset(preset)
        seg_cfg = SegConfig.from_preset(preset)
        seg_cfg = SegConfig(
            num_classes=num_seg_classes,
            prior_channels=seg_cfg.prior_channels,
            prior_strides=seg_cfg.prior_strides,
            res3_channels=seg_cfg.res3_channels,
            res4_channels=seg_cfg.res4_channels,
            fuse_channels=seg_cfg.fuse_channels,
        )
        self.encoder = Encoder(enc_cfg, seed=seed, dtype=dtype)
        self.detect = DetectionHead(
            self.encoder.res4_channels, num_classes=num_det_classes, seed=seed + 1, dtype=dtype
        )
        self.seghead = SegHead(
            self.encoder.res3_channels,
            self.encoder.res4_channels,
            self.encoder.res5_channels,
            seg_cfg,
            seed=seed + 2,
            dtype=dtype,
        )
        self._prior_cache: dict = {}

    def priors_for(self, input_size: Tuple[int, int]) -> List[PriorBox]:
        """Prior boxes for (W, H), cached per size."""
        if input_size not in self._prior_cache:
            self._prior_cache[input_size] = generate_priors(
                input_size, AnchorConfig.default(input_size)
            )
        return self._prior_cache[input_size]

    def forward(self, images: Tensor, block_gradients: bool = True) -> NetOutputs:
        pyramid = self.encoder(images, block_gradients=block_gradients)
        cls, reg = self.detect(pyramid.res4)
        seg = self.seghead(pyramid, block_gradients=block_gradients)
        n, _, h, w = images.data.shape
        expected = len(self.priors_for((w, h)))
        if cls.data.shape[1] != expected:
            raise RuntimeError(
                f"internal prior-count mismatch: head produced {cls.data.shape[1]} "
                f"logit rows but the anchor config tiles {expected} priors"
            )
        return NetOutputs(class_logits=cls, regressors=reg, seg_logits=seg, pyramid=pyramid)

    def seg_blocked_parameter_names(self) -> List[str]:
        """Parameters the segmentation loss must never update (blocking on)."""
        return [f"encoder.{n}" for n in self.encoder.blocked_parameter_names()]


def normalize_image(image_u8: np.ndarray, dtype=np.float32) -> np.ndarray:
    """HWC uint8 -> CHW float in [-0.5, 0.5]."""
    arr = image_u8.astype(dtype) / 255.0 - IMAGE_MEAN
    return np.ascontiguousarray(arr.transpose(2, 0, 1))
