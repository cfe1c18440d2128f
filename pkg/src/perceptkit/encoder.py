"""Shared residual feature extractor.

A 7x7 stride-2 stem plus stride-2 pooling, then four bottleneck residual
stages. Spatial extents halve and channels double per stage, producing taps
at strides 8 (res3), 16 (res4) and 32 (res5). res5 feeds only the
segmentation branch; when gradient blocking is on it is computed from a
stop-gradient tap of res4 so segmentation losses can never update the
shared lower stages.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from . import ndgrad as ng
from .ndgrad import BatchNorm2d, Conv2d, Module, Tensor


@dataclass(frozen=True)
class EncoderConfig:
    units_per_block: Tuple[int, int, int, int]
    stem_channels: int
    channel_ladder: Tuple[int, int, int, int]
    preset: str

    @staticmethod
    def full() -> "EncoderConfig":
        # resnet-50 ladder: 3/4/6/3 bottleneck units, channels doubling
        return EncoderConfig((3, 4, 6, 3), 64, (256, 512, 1024, 2048), "full")

    @staticmethod
    def mini() -> "EncoderConfig":
        # same stride ladder and taps, desk-scale widths
        return EncoderConfig((1, 1, 1, 1), 16, (16, 32, 64, 128), "mini")

    @staticmethod
    def from_preset(name: str) -> "EncoderConfig":
        if name == "full":
            return EncoderConfig.full()
        if name == "mini":
            return EncoderConfig.mini()
        raise ValueError(f"unknown encoder preset {name!r}")

    def validate(self):
        if any(u <= 0 for u in self.units_per_block):
            raise ValueError(f"unit counts must be positive, got {self.units_per_block}")
        if self.stem_channels <= 0 or any(c <= 0 for c in self.channel_ladder):
            raise ValueError("channel counts must be positive")


@dataclass
class FeaturePyramid:
    """Multi-level taps: res3 at stride 8, res4 at stride 16, res5 at stride 32."""

    res3: Tensor
    res4: Tensor
    res5: Tensor


class BottleneckUnit(Module):
    """1x1 reduce, 3x3, 1x1 expand with a shortcut; projection when needed."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, rng, dtype):
        super().__init__()
        width = max(out_ch // 4, 1)
        self.conv1 = Conv2d(in_ch, width, 1, bias=False, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(width, dtype=dtype)
        self.conv2 = Conv2d(width, width, 3, stride=stride, pad=1, bias=False, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(width, dtype=dtype)
        self.conv3 = Conv2d(width, out_ch, 1, bias=False, rng=rng, dtype=dtype)
        self.bn3 = BatchNorm2d(out_ch, dtype=dtype)
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv2d(in_ch, out_ch, 1, stride=stride, bias=False, rng=rng, dtype=dtype)
            self.proj_bn = BatchNorm2d(out_ch, dtype=dtype)
        else:
            self.proj = None

    def forward(self, x: Tensor) -> Tensor:
        y = ng.relu(self.bn1(self.conv1(x)))
        y = ng.relu(self.bn2(self.conv2(y)))
        y = self.bn3(self.conv3(y))
        shortcut = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return ng.relu(y + shortcut)


class ResidualStage(Module):
    def __init__(self, in_ch: int, out_ch: int, units: int, stride: int, rng, dtype):
        super().__init__()
        self.units: List[BottleneckUnit] = []
        for i in range(units):
            unit = BottleneckUnit(in_ch if i == 0 else out_ch, out_ch, stride if i == 0 else 1, rng, dtype)
            setattr(self, f"unit{i}", unit)
            self.units.append(unit)

    def forward(self, x: Tensor) -> Tensor:
        for unit in self.units:
            x = unit(x)
        return x


class Stem(Module):
    def __init__(self, out_ch: int, rng, dtype):
        super().__init__()
        self.conv = Conv2d(3, out_ch, 7, stride=2, pad=3, bias=False, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(out_ch, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        y = ng.relu(self.bn(self.conv(x)))
        return ng.avgpool2d(y, kernel=2, stride=2)


class Encoder(Module):
    DIVISOR = 32

    def __init__(self, config: EncoderConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        ladder = config.channel_ladder
        self.stem = Stem(config.stem_channels, rng, dtype)
        self.stage1 = ResidualStage(config.stem_channels, ladder[0], config.units_per_block[0], 1, rng, dtype)
        self.stage2 = ResidualStage(ladder[0], ladder[1], config.units_per_block[1], 2, rng, dtype)
        self.stage3 = ResidualStage(ladder[1], ladder[2], config.units_per_block[2], 2, rng, dtype)
        self.stage4 = ResidualStage(ladder[2], ladder[3], config.units_per_block[3], 2, rng, dtype)

    @property
    def res3_channels(self) -> int:
        return self.config.channel_ladder[1]

    @property
    def res4_channels(self) -> int:
        return self.config.channel_ladder[2]

    @property
    def res5_channels(self) -> int:
        return self.config.channel_ladder[3]

    def forward(self, image: Tensor, block_gradients: bool = False) -> FeaturePyramid:
        n, c, h, w = image.data.shape
        if h % self.DIVISOR or w % self.DIVISOR:
            raise ValueError(
                f"input extents must be divisible by {self.DIVISOR}, got {h}x{w}"
            )
        x = self.stem(image)
        x = self.stage1(x)
        res3 = self.stage2(x)
        res4 = self.stage3(res3)
        res5_in = ng.stop_gradient(res4) if block_gradients else res4
        res5 = self.stage4(res5_in)
        return FeaturePyramid(res3=res3, res4=res4, res5=res5)

    def blocked_parameter_names(self) -> List[str]:
        """Parameters below the segmentation gradient block (stem + stages 1-3)."""
        names = []
        for prefix in ("stem", "stage1", "stage2", "stage3"):
            child: Module = getattr(self, prefix)
            names.extend(f"{prefix}.{k}" for k, _ in child.named_parameters())
        return names


def build_encoder(config: EncoderConfig, seed: int = 0, dtype=np.float32) -> Encoder:
    return Encoder(config, seed=seed, dtype=dtype)
