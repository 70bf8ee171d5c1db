"""Decoder: 5 conv modules, 5 SAMs, 4 transpose-conv upsamplers, 4 skip
concatenations gated by CAMs, and a 1x1 sigmoid head.

Stage flow: conv module m -> SAM m -> (m <= 4) transpose m -> concat with the
skip from the matching encoder level (deepest skip first) -> CAM m -> next
module. After module 5 and SAM 5 the head maps to one logit channel.

Transpose convs reduce to the width of the incoming skip, so each concat is
twice the skip width. The per-forward SAM/CAM counters exist so tests can
assert the 5/4 application schedule (0/0 when attention is disabled).
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .attention import ChannelAttention, SpatialAttention
from .backbone import ConvBlock, TrunkPlan, check_feature_map
from .errors import ShapeError


@dataclass(frozen=True)
class DecoderPlan:
    """Module widths/blocks plus the skip widths consumed deep-to-shallow."""

    channels: tuple = (512, 512, 256, 128, 64)
    blocks: tuple = (3, 3, 3, 2, 2)
    bottom_channels: int = 512
    skip_channels: tuple = (512, 256, 128, 64)

    def __post_init__(self):
        if len(self.channels) != len(self.blocks):
            raise ShapeError(
                f"plan has {len(self.channels)} widths but {len(self.blocks)} block counts"
            )
        if len(self.skip_channels) != len(self.channels) - 1:
            raise ShapeError(
                f"{len(self.channels)} modules need {len(self.channels) - 1} skip "
                f"widths, got {len(self.skip_channels)}"
            )

    @classmethod
    def from_trunk(cls, plan: TrunkPlan):
        ch = plan.channels
        return cls(
            channels=tuple(reversed(ch)),
            blocks=tuple(reversed(plan.blocks)),
            bottom_channels=ch[-1],
            skip_channels=tuple(reversed(ch[:-1])),
        )

    @property
    def stages(self):
        return len(self.channels)


class DecoderStage(nn.Module):
    """A run of conv blocks, the first one absorbing the concat width."""

    def __init__(self, in_channels, out_channels, n_blocks):
        super().__init__()
        blocks = [ConvBlock(in_channels, out_channels)]
        blocks += [ConvBlock(out_channels, out_channels) for _ in range(n_blocks - 1)]
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x


class Decoder(nn.Module):
    def __init__(self, plan=None, use_attention=True, reduction=16):
        super().__init__()
        self.plan = plan or DecoderPlan()
        self.use_attention = use_attention
        self.sam_calls = 0
        self.cam_calls = 0

        stages, ups = [], []
        c_in = self.plan.bottom_channels
        for m in range(self.plan.stages):
            stages.append(DecoderStage(c_in, self.plan.channels[m], self.plan.blocks[m]))
            if m < self.plan.stages - 1:
                skip_c = self.plan.skip_channels[m]
                ups.append(nn.ConvTranspose2d(self.plan.channels[m], skip_c, 2, stride=2))
                c_in = 2 * skip_c
        self.stages = nn.ModuleList(stages)
        self.ups = nn.ModuleList(ups)
        if use_attention:
            self.sams = nn.ModuleList(SpatialAttention() for _ in range(self.plan.stages))
            self.cams = nn.ModuleList(
                ChannelAttention(2 * c, reduction) for c in self.plan.skip_channels
            )
        else:
            self.sams = None
            self.cams = None
        self.head = nn.Conv2d(self.plan.channels[-1], 1, 1)

    def _sam(self, m, x):
        if self.sams is None:
            return x
        self.sam_calls += 1
        return self.sams[m](x)

    def _cam(self, m, x):
        if self.cams is None:
            return x
        self.cam_calls += 1
        return self.cams[m](x)

    def forward(self, bottom, skips):
        """Logits of shape (B, 1, H, W) for skips listed shallow to deep."""
        check_feature_map(bottom, channels=self.plan.bottom_channels, name="bottom")
        if len(skips) != len(self.ups):
            raise ShapeError(f"expected {len(self.ups)} skips, got {len(skips)}")
        self.sam_calls = 0
        self.cam_calls = 0
        x = bottom
        for m in range(self.plan.stages):
            x = self.stages[m](x)
            x = self._sam(m, x)
            if m < len(self.ups):
                x = self.ups[m](x)
                skip = skips[-(m + 1)]
                check_feature_map(skip, channels=self.plan.skip_channels[m], name="skip")
                if x.shape[-2:] != skip.shape[-2:]:
                    raise ShapeError(
                        f"stage {m + 1}: upsampled {tuple(x.shape)} does not align "
                        f"with skip {tuple(skip.shape)}"
                    )
                x = torch.cat([x, skip], dim=1)
                x = self._cam(m, x)
        return self.head(x)

    def decode(self, bottom, skips):
        """Change probability map in (0, 1)."""
        return torch.sigmoid(self.forward(bottom, skips))
