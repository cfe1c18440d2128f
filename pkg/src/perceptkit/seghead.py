"""Quarter-resolution segmentation branch.

A reduced pyramid-pooling global prior over res5 (three average-pooled
views projected to descending channel widths), fused at stride 8 with
upsampled res3/res4 local features taken behind stop-gradient taps, then a
bias-free fusion convolution, a pointwise classifier, and a learnable
bilinear-initialized x2 upsample to stride 4. None of the decode
convolutions carries a bias term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import ndgrad as ng
from .encoder import FeaturePyramid
from .ndgrad import Conv2d, Deconv2d, Module, Tensor


@dataclass(frozen=True)
class SegConfig:
    num_classes: int = 19
    prior_channels: Tuple[int, int, int] = (512, 256, 128)
    prior_strides: Tuple[int, int, int] = (1, 2, 4)
    res3_channels: int = 128
    res4_channels: int = 256
    fuse_channels: int = 512
    output_downscale: int = 4

    @staticmethod
    def full() -> "SegConfig":
        return SegConfig()

    @staticmethod
    def mini() -> "SegConfig":
        # same structure, desk-scale widths
        return SegConfig(
            prior_channels=(64, 32, 16),
            res3_channels=16,
            res4_channels=32,
            fuse_channels=64,
        )

    @staticmethod
    def from_preset(name: str) -> "SegConfig":
        if name == "full":
            return SegConfig.full()
        if name == "mini":
            return SegConfig.mini()
        raise ValueError(f"unknown segmentation preset {name!r}")


class SegHead(Module):
    def __init__(
        self,
        res3_ch: int,
        res4_ch: int,
        res5_ch: int,
        config: SegConfig = SegConfig(),
        seed: int = 0,
        dtype=np.float32,
    ):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.config = config
        self.prior_convs = []
        for i, c in enumerate(config.prior_channels):
            conv = Conv2d(res5_ch, c, 1, bias=False, rng=rng, dtype=dtype)
            setattr(self, f"prior{i}", conv)
            self.prior_convs.append(conv)
        self.local3 = Conv2d(res3_ch, config.res3_channels, 3, pad=1, bias=False, rng=rng, dtype=dtype)
        self.local4 = Conv2d(res4_ch, config.res4_channels, 3, pad=1, bias=False, rng=rng, dtype=dtype)
        self.local4_up = Deconv2d(config.res4_channels, 2, dtype=dtype)
        total = sum(config.prior_channels) + config.res3_channels + config.res4_channels
        self.fuse = Conv2d(total, config.fuse_channels, 3, pad=1, bias=False, rng=rng, dtype=dtype)
        self.classifier = Conv2d(config.fuse_channels, config.num_classes, 1, bias=False, rng=rng, dtype=dtype)
        self.final_up = Deconv2d(config.num_classes, 2, dtype=dtype)

    def forward(self, pyramid: FeaturePyramid, block_gradients: bool = True) -> Tensor:
        """Class logits at 1/4 of the input extents."""
        res3, res4, res5 = pyramid.res3, pyramid.res4, pyramid.res5
        h5, w5 = res5.data.shape[2], res5.data.shape[3]
        max_stride = max(self.config.prior_strides)
        if h5 % max_stride or w5 % max_stride:
            raise ValueError(
                f"res5 extents {h5}x{w5} must be divisible by the deepest pooling "
                f"stride {max_stride} (input extents divisible by {32 * max_stride})"
            )
        h8, w8 = res3.data.shape[2], res3.data.shape[3]
        if block_gradients:
            res3 = ng.stop_gradient(res3)
            res4 = ng.stop_gradient(res4)

        parts = []
        for stride, conv in zip(self.config.prior_strides, self.prior_convs):
            pooled = res5 if stride == 1 else ng.avgpool2d(res5, stride, stride)
            projected = ng.relu(conv(pooled))
            parts.append(ng.resize_bilinear(projected, h8, w8))
        parts.append(ng.relu(self.local3(res3)))
        parts.append(self.local4_up(ng.relu(self.local4(res4))))

        fused = ng.relu(self.fuse(ng.concat(parts, axis=1)))
        logits8 = self.classifier(fused)
        return self.final_up(logits8)


def seg_forward(head: SegHead, pyramid: FeaturePyramid, block_gradients: bool = True) -> Tensor:
    return head(pyramid, block_gradients=block_gradients)
