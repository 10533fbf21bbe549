"""Staged encoders: VGG16 and ResNet50 use the torchvision definitions,
MobileNetV1 (not shipped by torchvision) is defined here.

Every encoder maps a (B, 3, H, W) batch to four skip features at strides
2/4/8/16 and a bottleneck at stride 32; with 224x224 input the bottleneck
is z x 7 x 7 with z = 512 (vgg16), 2048 (resnet50) or 1024 (mobilenetv1).

Pretrained ImageNet weights are optional (they require download access);
by default the architectures start from their standard random init.
"""

from __future__ import annotations

import torch
from torch import nn
from torchvision import models

ENCODER_CHANNELS = {
    "vgg16": 512,
    "resnet50": 2048,
    "mobilenetv1": 1024,
}


class StagedVgg16(nn.Module):
    # torchvision vgg16.features indices of the five max-pools
    _POOLS = (4, 9, 16, 23, 30)

    def __init__(self, pretrained: bool = False):
        super().__init__()
        weights = models.VGG16_Weights.IMAGENET1K_V1 if pretrained else None
        self.features = models.vgg16(weights=weights).features
        self.skip_channels = (64, 128, 256, 512)
        self.out_channels = 512

    def stages(self, x):
        skips = []
        prev = 0
        for pool_idx in self._POOLS:
            for i in range(prev, pool_idx + 1):
                x = self.features[i](x)
            skips.append(x)
            prev = pool_idx + 1
        # skips holds the five post-pool maps at strides 2..32
        return skips[:4], skips[4]


class StagedResnet50(nn.Module):
    def __init__(self, pretrained: bool = False):
        super().__init__()
        weights = models.ResNet50_Weights.IMAGENET1K_V2 if pretrained else None
        net = models.resnet50(weights=weights)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu)
        self.maxpool = net.maxpool
        self.layer1, self.layer2 = net.layer1, net.layer2
        self.layer3, self.layer4 = net.layer3, net.layer4
        self.skip_channels = (64, 256, 512, 1024)
        self.out_channels = 2048

    def stages(self, x):
        c1 = self.stem(x)                    # /2
        c2 = self.layer1(self.maxpool(c1))   # /4
        c3 = self.layer2(c2)                 # /8
        c4 = self.layer3(c3)                 # /16
        c5 = self.layer4(c4)                 # /32
        return [c1, c2, c3, c4], c5


def _dw_block(cin, cout, stride):
    return nn.Sequential(
        nn.Conv2d(cin, cin, 3, stride=stride, padding=1, groups=cin, bias=False),
        nn.BatchNorm2d(cin), nn.ReLU(inplace=True),
        nn.Conv2d(cin, cout, 1, bias=False),
        nn.BatchNorm2d(cout), nn.ReLU(inplace=True),
    )


class MobileNetV1(nn.Module):
    """Standard depthwise-separable stack (width multiplier 1)."""

    def __init__(self, pretrained: bool = False):
        super().__init__()
        if pretrained:
            raise ValueError("no pretrained MobileNetV1 weights are distributed here")
        self.stage1 = nn.Sequential(          # /2
            nn.Conv2d(3, 32, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(32), nn.ReLU(inplace=True),
            _dw_block(32, 64, 1),
        )
        self.stage2 = nn.Sequential(_dw_block(64, 128, 2), _dw_block(128, 128, 1))    # /4
        self.stage3 = nn.Sequential(_dw_block(128, 256, 2), _dw_block(256, 256, 1))   # /8
        self.stage4 = nn.Sequential(
            _dw_block(256, 512, 2),
            *[_dw_block(512, 512, 1) for _ in range(5)],
        )                                                                              # /16
        self.stage5 = nn.Sequential(_dw_block(512, 1024, 2), _dw_block(1024, 1024, 1))  # /32
        self.skip_channels = (64, 128, 256, 512)
        self.out_channels = 1024

    def stages(self, x):
        c1 = self.stage1(x)
        c2 = self.stage2(c1)
        c3 = self.stage3(c2)
        c4 = self.stage4(c3)
        c5 = self.stage5(c4)
        return [c1, c2, c3, c4], c5


def build_encoder(architecture: str, pretrained: bool = False) -> nn.Module:
    if architecture == "vgg16":
        return StagedVgg16(pretrained)
    if architecture == "resnet50":
        return StagedResnet50(pretrained)
    if architecture == "mobilenetv1":
        return MobileNetV1(pretrained)
    raise ValueError(f"unknown architecture {architecture!r}; "
                     f"expected one of {sorted(ENCODER_CHANNELS)}")
