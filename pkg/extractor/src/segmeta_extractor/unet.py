"""U-Net style decoder on top of a staged encoder.

The decoder upsamples the stride-32 bottleneck back to input resolution,
concatenating the encoder's skip features on the way, and ends in a 1x1
conv producing one logit channel.  Upsampling always interpolates to the
skip's exact spatial size, so the network runs at any input resolution.
The decoder exists only for fine-tuning; extraction keeps the encoder.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


def _conv_block(cin, cout):
    # GroupNorm: no running statistics, so tiny-batch fine-tuning behaves
    # identically in train and eval mode
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.GroupNorm(8, cout), nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1, bias=False),
        nn.GroupNorm(8, cout), nn.ReLU(inplace=True),
    )


class UnetSegmenter(nn.Module):
    def __init__(self, encoder: nn.Module, decoder_width: int = 32):
        super().__init__()
        self.encoder = encoder
        widths = [decoder_width * 8, decoder_width * 4, decoder_width * 2, decoder_width]
        skips = list(encoder.skip_channels)
        ups = []
        cin = encoder.out_channels
        for w, skip_c in zip(widths, reversed(skips)):
            ups.append(_conv_block(cin + skip_c, w))
            cin = w
        self.up_blocks = nn.ModuleList(ups)
        self.head = nn.Conv2d(widths[-1], 1, 1)

    def forward(self, x):
        skips, bottom = self.encoder.stages(x)
        out = bottom
        for block, skip in zip(self.up_blocks, reversed(skips)):
            out = F.interpolate(out, size=skip.shape[-2:], mode="bilinear",
                                align_corners=False)
            out = block(torch.cat([out, skip], dim=1))
        out = F.interpolate(out, size=x.shape[-2:], mode="bilinear",
                            align_corners=False)
        return self.head(out)
