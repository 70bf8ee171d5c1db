"""Encoder variants: single-stream, siamese, and the triplet encoder.

The triplet encoder runs weight-shared trunks over both input dates plus an
independent trunk over their absolute difference, fusing the three features
at every level. The difference branch does not pool its own stage output;
it pools the fused feature, so change evidence re-enters at every depth.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import Trunk, TrunkPlan, check_feature_map, max_pool
from .errors import ShapeError
from .fusion import MBSSCA, PlainFusion


def differential_image(i1, i2):
    """Elementwise |i1 - i2| of two aligned inputs (applied after normalization)."""
    check_feature_map(i1, name="i1")
    check_feature_map(i2, name="i2")
    if i1.shape != i2.shape:
        raise ShapeError(
            f"inputs differ in shape: {tuple(i1.shape)} vs {tuple(i2.shape)}"
        )
    return (i1 - i2).abs()


@dataclass
class EncoderOutput:
    """Per-level skip features (shallow to deep) plus the bottom feature."""

    skips: list
    bottom: torch.Tensor


def _check_input_pair(x1, x2, in_channels, levels):
    check_feature_map(x1, channels=in_channels, name="x1")
    check_feature_map(x2, channels=in_channels, name="x2")
    if x1.shape != x2.shape:
        raise ShapeError(
            f"inputs differ in shape: {tuple(x1.shape)} vs {tuple(x2.shape)}"
        )
    div = 2 ** (levels - 1)
    h, w = x1.shape[-2:]
    if h % div or w % div:
        raise ShapeError(f"spatial dims must be divisible by {div}, got {h}x{w}")


class SingleEncoder(nn.Module):
    """One trunk fed the differential image; raw stage features as skips."""

    def __init__(self, plan=None):
        super().__init__()
        self.plan = plan or TrunkPlan()
        self.t1t2 = Trunk(self.plan)

    def forward(self, x1, x2):
        _check_input_pair(x1, x2, self.plan.in_channels, self.plan.stages)
        feats = self.t1t2(differential_image(x1, x2))
        return EncoderOutput(feats[:-1], feats[-1])

    def extra_ops(self, inputs, output):
        # the input differencing; trunk pools are counted by the trunk
        return inputs[0].numel()


class SiameseEncoder(nn.Module):
    """Shared-weight trunks on both dates, merged per level by |l1 - l2|.

    The raw difference is passed through a small learned projection so the
    merge is trainable rather than a fixed subtraction.
    """

    def __init__(self, plan=None):
        super().__init__()
        self.plan = plan or TrunkPlan()
        self.t1t2 = Trunk(self.plan)
        self.fuse = nn.ModuleList(PlainFusion(c, c) for c in self.plan.channels)

    def forward(self, x1, x2):
        _check_input_pair(x1, x2, self.plan.in_channels, self.plan.stages)
        f1 = self.t1t2(x1)
        f2 = self.t1t2(x2)
        outs = [self.fuse[p]((a - b).abs()) for p, (a, b) in enumerate(zip(f1, f2))]
        return EncoderOutput(outs[:-1], outs[-1])

    def extra_ops(self, inputs, output):
        # per-level feature differencing; fused maps share the raw widths
        return sum(s.numel() for s in output.skips) + output.bottom.numel()


class TripletEncoder(nn.Module):
    """Shared T1/T2 trunks plus an independent difference trunk, fused per level.

    With use_mbsscca the fusion is the cross-attention block; otherwise a plain
    1x1 reduction of the (l1, ld, l2) concat. Either way the difference branch
    continues from the pooled fusion output, not from its own stage output.
    """

    def __init__(self, plan=None, use_mbsscca=True, reduction=16):
        super().__init__()
        self.plan = plan or TrunkPlan()
        self.use_mbsscca = use_mbsscca
        self.t1t2 = Trunk(self.plan)
        self.td = Trunk(self.plan)
        if use_mbsscca:
            fusions = [MBSSCA(c, reduction) for c in self.plan.channels]
        else:
            fusions = [PlainFusion(3 * c, c) for c in self.plan.channels]
        self.fusions = nn.ModuleList(fusions)

    def forward(self, x1, x2, difference=None):
        _check_input_pair(x1, x2, self.plan.in_channels, self.plan.stages)
        if difference is None:
            difference = differential_image(x1, x2)
        f1, f2, fd = x1, x2, difference
        outs = []
        l1 = l2 = None
        for p in range(self.plan.stages):
            if p > 0:
                f1 = max_pool(l1)
                f2 = max_pool(l2)
                fd = max_pool(outs[-1])
            l1 = self.t1t2.stages[p](f1)
            l2 = self.t1t2.stages[p](f2)
            ld = self.td.stages[p](fd)
            if self.use_mbsscca:
                outs.append(self.fusions[p](l1, ld, l2))
            else:
                outs.append(self.fusions[p](torch.cat([l1, ld, l2], dim=1)))
        return EncoderOutput(outs[:-1], outs[-1])

    def extra_ops(self, inputs, output):
        # input differencing plus the three per-branch pools at each level;
        # the trunks never run their own forward here, so pools land on us
        return inputs[0].numel() + 3 * sum(s.numel() for s in output.skips)
