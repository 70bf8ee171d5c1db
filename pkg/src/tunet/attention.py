"""Spatial and channel attention gates.

Both are CBAM-style: cheap pooled statistics squeezed through a small learned
map, then a sigmoid gate multiplied back onto the input.
"""

import torch
import torch.nn as nn

from .backbone import check_feature_map
from .errors import ConfigurationError


class SpatialAttention(nn.Module):
    """Per-pixel gate: sigmoid(conv7x7([mean_c(x), max_c(x)]))."""

    def __init__(self, kernel_size=7):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ConfigurationError(f"kernel_size must be odd, got {kernel_size}")
        self.conv7 = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def map(self, x):
        """Attention map in (0, 1), shape (B, 1, H, W)."""
        check_feature_map(x)
        avg = x.mean(dim=1, keepdim=True)
        mx = x.amax(dim=1, keepdim=True)
        return torch.sigmoid(self.conv7(torch.cat([avg, mx], dim=1)))

    def forward(self, x):
        return x * self.map(x)

    def extra_ops(self, inputs, output):
        # avg/max pooled reads, gate multiply, sigmoid plane
        x = inputs[0]
        return 3 * x.numel() + x.shape[0] * x.shape[2] * x.shape[3]


class ChannelAttention(nn.Module):
    """Per-channel gate from a shared bias-free bottleneck MLP over avg/max pools.

    vector = sigmoid(mlp(avgpool(x)) + mlp(maxpool(x))), mlp(v) = w2 relu(w1 v).
    The reduction is clipped to the channel count and must divide it.
    """

    def __init__(self, channels, reduction=16):
        super().__init__()
        r = min(reduction, channels)
        if channels % r != 0:
            raise ConfigurationError(
                f"reduction {r} does not divide channel count {channels}"
            )
        self.w1 = nn.Linear(channels, channels // r, bias=False)
        self.w2 = nn.Linear(channels // r, channels, bias=False)

    @property
    def channels(self):
        return self.w1.in_features

    def _mlp(self, v):
        return self.w2(torch.relu(self.w1(v)))

    def vector(self, x):
        """Gate vector in (0, 1), shape (B, C, 1, 1)."""
        check_feature_map(x, channels=self.channels)
        b, c = x.shape[:2]
        z = self._mlp(x.mean(dim=(2, 3))) + self._mlp(x.amax(dim=(2, 3)))
        return torch.sigmoid(z).view(b, c, 1, 1)

    def forward(self, x):
        return x * self.vector(x)

    def extra_ops(self, inputs, output):
        # avg/max pooled reads, gate multiply, sigmoid over channels
        x = inputs[0]
        return 3 * x.numel() + x.shape[0] * x.shape[1]
