"""VGG16-style convolutional trunk used by every encoder branch.

The trunk is five stages of 3x3 conv blocks (conv -> BN -> ReLU) with 2x2
max pooling between stages. Stage outputs double as UNet skip features, the
deepest one as the bottom feature. Weights can be loaded from a named-tensor
archive so ImageNet-pretrained convs can seed the temporal branches.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError, ValidationError, WeightLoadError

TRUNK_CHANNELS = (64, 128, 256, 512, 512)
TRUNK_BLOCKS = (2, 2, 3, 3, 3)


@dataclass(frozen=True)
class TrunkPlan:
    """Channel widths and block counts per stage. Defaults match VGG16."""

    channels: tuple = TRUNK_CHANNELS
    blocks: tuple = TRUNK_BLOCKS
    in_channels: int = 3

    def __post_init__(self):
        if len(self.channels) != len(self.blocks):
            raise ShapeError(
                f"plan has {len(self.channels)} widths but {len(self.blocks)} block counts"
            )
        if len(self.channels) < 2:
            raise ShapeError("trunk plan needs at least two stages")
        if any(c < 1 for c in self.channels) or any(b < 1 for b in self.blocks):
            raise ShapeError("stage widths and block counts must be positive")
        if self.in_channels < 1:
            raise ShapeError("in_channels must be positive")

    @property
    def stages(self):
        return len(self.channels)


def check_feature_map(x, channels=None, name="input"):
    """NCHW rank and (optionally) channel-width check; rejects non-finite values."""
    if not torch.is_tensor(x) or x.dim() != 4:
        got = tuple(x.shape) if torch.is_tensor(x) else type(x).__name__
        raise ShapeError(f"{name} must be a NCHW tensor, got {got}")
    if channels is not None and x.shape[1] != channels:
        raise ShapeError(f"{name} has {x.shape[1]} channels, expected {channels}")
    if not torch.isfinite(x).all():
        raise ValidationError(f"{name} contains non-finite values")


def max_pool(x):
    """2x2 stride-2 max pool. Odd spatial sizes would silently drop rows, so reject them."""
    check_feature_map(x)
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool needs even spatial dims, got {h}x{w}")
    return F.max_pool2d(x, 2)


class ConvBlock(nn.Module):
    """3x3 conv (pad 1, bias) -> batch norm -> ReLU."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.bn = nn.BatchNorm2d(out_channels)

    def forward(self, x):
        check_feature_map(x, channels=self.conv.in_channels)
        return F.relu(self.bn(self.conv(x)))

    def extra_ops(self, inputs, output):
        # the functional ReLU; conv and BN are hooked submodules
        return output.numel()


class TrunkStage(nn.Module):
    """A run of same-width conv blocks, the first one changing channel width."""

    def __init__(self, in_channels, out_channels, n_blocks):
        super().__init__()
        blocks = [ConvBlock(in_channels, out_channels)]
        blocks += [ConvBlock(out_channels, out_channels) for _ in range(n_blocks - 1)]
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x


class Trunk(nn.Module):
    """Plain single-stream trunk: stage -> pool -> stage -> ...

    forward returns the list of stage outputs (pre-pool), deepest last. The
    triplet encoder drives stages manually because its difference branch pools
    fused features instead of its own stage outputs.
    """

    def __init__(self, plan=None):
        super().__init__()
        self.plan = plan or TrunkPlan()
        stages = []
        c_in = self.plan.in_channels
        for c_out, n in zip(self.plan.channels, self.plan.blocks):
            stages.append(TrunkStage(c_in, c_out, n))
            c_in = c_out
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        check_feature_map(x, channels=self.plan.in_channels)
        feats = []
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = max_pool(x)
            x = stage(x)
            feats.append(x)
        return feats

    def extra_ops(self, inputs, output):
        # interleaved max pools read each pooled stage output once
        return sum(f.numel() for f in output[:-1])


def init_parameters(module, seed):
    """He fan-in init for convs/linears, identity for norms.

    Uses a local generator so results are bitwise-reproducible regardless of
    global RNG state. Walks modules in registration order.
    """
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=g)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.Linear):
                m.weight.normal_(0.0, math.sqrt(2.0 / m.in_features), generator=g)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.BatchNorm2d):
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.running_mean.zero_()
                m.running_var.fill_(1.0)
                m.num_batches_tracked.zero_()
    return module


def build_trunk(plan=None, weights=None, seed=0):
    """Construct a trunk, seed-init it, then optionally load an archive over it."""
    trunk = Trunk(plan)
    init_parameters(trunk, seed)
    if weights is not None:
        load_trunk_archive(trunk, weights)
    return trunk


def _named_trunk_tensors(trunk):
    for p, stage in enumerate(trunk.stages, 1):
        for q, block in enumerate(stage.blocks, 1):
            prefix = f"module{p}.block{q}"
            yield f"{prefix}.conv.weight", block.conv.weight
            yield f"{prefix}.conv.bias", block.conv.bias
            yield f"{prefix}.bn.scale", block.bn.weight
            yield f"{prefix}.bn.shift", block.bn.bias
            yield f"{prefix}.bn.mean", block.bn.running_mean
            yield f"{prefix}.bn.var", block.bn.running_var


def trunk_to_archive(trunk):
    """Dump trunk tensors under their canonical archive names."""
    return {name: t.detach().cpu().numpy().copy() for name, t in _named_trunk_tensors(trunk)}


def save_trunk_archive(trunk, path):
    np.savez(path, **trunk_to_archive(trunk))


def load_trunk_archive(trunk, archive):
    """Load a name->array mapping (or .npz path) into a trunk, strictly.

    Missing tensors, shape mismatches and unexpected names all raise
    WeightLoadError naming the offending tensor.
    """
    if isinstance(archive, (str, bytes)) or hasattr(archive, "__fspath__"):
        with np.load(archive) as z:
            archive = {k: z[k] for k in z.files}
    expected = dict(_named_trunk_tensors(trunk))
    extra = sorted(set(archive) - set(expected))
    if extra:
        raise WeightLoadError(f"unexpected tensor in archive: {extra[0]}")
    with torch.no_grad():
        for name, target in expected.items():
            if name not in archive:
                raise WeightLoadError(f"archive is missing tensor: {name}")
            src = np.asarray(archive[name])
            if tuple(src.shape) != tuple(target.shape):
                raise WeightLoadError(
                    f"{name}: archive shape {tuple(src.shape)} does not match "
                    f"model shape {tuple(target.shape)}"
                )
            target.copy_(torch.from_numpy(src.astype(np.float32, copy=False)))
    return trunk
