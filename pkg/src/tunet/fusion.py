"""Per-level fusion blocks that merge encoder branches back to C channels."""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import ChannelAttention, SpatialAttention
from .backbone import check_feature_map
from .errors import ShapeError


class MBSSCA(nn.Module):
    """Multi-branch spatial-spectral cross attention over (l1, ld, l2).

    Channel attention gates the 3C concat [l1, ld, l2]. Two spatial gates are
    built from change evidence, one from |l1 - l2| and one from the difference
    branch ld, each through a 1x1 conv + ReLU before the 7x7 spatial gate;
    their average rescales the channel-gated stack. A 1x1 conv + BN + ReLU
    reduces the result back to C channels.
    """

    def __init__(self, channels, reduction=16):
        super().__init__()
        self.channels = channels
        self.cam = ChannelAttention(3 * channels, reduction)
        self.conv_pair = nn.Conv2d(channels, channels, 1)
        self.conv_diff = nn.Conv2d(channels, channels, 1)
        self.sam_pair = SpatialAttention()
        self.sam_diff = SpatialAttention()
        self.reduce = nn.Conv2d(3 * channels, channels, 1)
        self.bn = nn.BatchNorm2d(channels)

    def _check(self, l1, ld, l2):
        for name, t in (("l1", l1), ("ld", ld), ("l2", l2)):
            check_feature_map(t, channels=self.channels, name=name)
        if not (l1.shape == ld.shape == l2.shape):
            raise ShapeError(
                f"branch features disagree: {tuple(l1.shape)} / "
                f"{tuple(ld.shape)} / {tuple(l2.shape)}"
            )

    def channel_fusion(self, l1, ld, l2):
        """Concat in (l1, ld, l2) order, scaled by its channel-attention vector."""
        stack = torch.cat([l1, ld, l2], dim=1)
        return stack * self.cam.vector(stack)

    def spatial_weight_pair(self, l1, l2):
        return self.sam_pair.map(F.relu(self.conv_pair((l1 - l2).abs())))

    def spatial_weight_diff(self, ld):
        return self.sam_diff.map(F.relu(self.conv_diff(ld)))

    def forward(self, l1, ld, l2):
        self._check(l1, ld, l2)
        w = 0.5 * (self.spatial_weight_pair(l1, l2) + self.spatial_weight_diff(ld))
        return F.relu(self.bn(self.reduce(w * self.channel_fusion(l1, ld, l2))))

    def extra_ops(self, inputs, output):
        # diffs, ReLUs, gate averaging/multiplies, and the pooled reads of the
        # attention pieces driven through .map/.vector, one op per element
        return 17 * inputs[0].numel()


class PlainFusion(nn.Module):
    """Attention-free merge: 1x1 conv + BN + ReLU down to `channels`."""

    def __init__(self, in_channels, channels):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, channels, 1)
        self.bn = nn.BatchNorm2d(channels)

    def forward(self, x):
        check_feature_map(x, channels=self.conv.in_channels)
        return F.relu(self.bn(self.conv(x)))

    def extra_ops(self, inputs, output):
        return output.numel()
