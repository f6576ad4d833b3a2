"""特徴ピラミッドを出すバックボーン

どのバックボーンも ``forward(x) -> OrderedDict[name, Tensor]`` を返し、
レベルの並びとストライドは ``strides`` に一致します。
"""

from collections import OrderedDict
import math
from typing import Dict, List, Tuple

import torch
from torch import nn
from torchvision.models.detection.backbone_utils import resnet_fpn_backbone
from torchvision.ops import FeaturePyramidNetwork

from src.core.exceptions import ConfigurationError


class Backbone(nn.Module):
    """特徴ピラミッドの共通インターフェース"""

    out_channels: int
    strides: Tuple[int, ...]
    feature_names: List[str]
    # RoIAlign に渡すレベル（追加の max-pool レベルは含めない）
    roi_feature_names: List[str]


def _group_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(8, channels), channels)


class ConvBlock(nn.Sequential):
    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False),
            _group_norm(out_channels),
            nn.ReLU(inplace=True),
        )


class DeskBackbone(Backbone):
    """CPU 向けの小さな 3 段ピラミッド（ストライド 8/16/32）+ FPN

    バッチが小さいので BatchNorm ではなく GroupNorm を使います。
    """

    STRIDES = (8, 16, 32)

    def __init__(self, width: int, out_channels: int):
        super().__init__()
        w = width
        self.stem = nn.Sequential(ConvBlock(3, w, 2), ConvBlock(w, w, 2))
        self.c3 = nn.Sequential(ConvBlock(w, 2 * w, 2), ConvBlock(2 * w, 2 * w))
        self.c4 = nn.Sequential(ConvBlock(2 * w, 4 * w, 2), ConvBlock(4 * w, 4 * w))
        self.c5 = nn.Sequential(ConvBlock(4 * w, 8 * w, 2), ConvBlock(8 * w, 8 * w))
        self.fpn = FeaturePyramidNetwork([2 * w, 4 * w, 8 * w], out_channels)
        self.out_channels = out_channels
        self.strides = self.STRIDES
        self.feature_names = ["0", "1", "2"]
        self.roi_feature_names = list(self.feature_names)

    def forward(self, x: torch.Tensor) -> Dict[str, torch.Tensor]:
        x = self.stem(x)
        c3 = self.c3(x)
        c4 = self.c4(c3)
        c5 = self.c5(c4)
        return self.fpn(OrderedDict([("0", c3), ("1", c4), ("2", c5)]))


class ResNetFPNBackbone(Backbone):
    """ResNet-50 + FPN（ストライド 4〜64、5 レベル）。事前学習重みは読み込まない"""

    STRIDES = (4, 8, 16, 32, 64)

    def __init__(self, out_channels: int = 256):
        super().__init__()
        if out_channels != 256:
            raise ConfigurationError(
                "resnet50_fpn produces 256 FPN channels",
                details={"fpn_channels": out_channels}
            )
        self.body = resnet_fpn_backbone(backbone_name="resnet50", weights=None, trainable_layers=5)
        self.out_channels = self.body.out_channels
        self.strides = self.STRIDES
        self.feature_names = ["0", "1", "2", "3", "pool"]
        self.roi_feature_names = ["0", "1", "2", "3"]

    def forward(self, x: torch.Tensor) -> Dict[str, torch.Tensor]:
        return self.body(x)
