"""Learnable-parameter and FLOP accounting.

FLOPs are multiply-accumulate pairs for conv / transpose-conv / linear layers
(output_elements x kernel_volume x in_channels), plus one op per element for
normalization, activations, pooling and gating. The cheap elementwise traffic
is tallied by modules that expose extra_ops(inputs, output); convs dominate by
two orders of magnitude, so the exactness that matters is in the MAC terms.
"""

import inspect
from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class ComplexityReport:
    params: int
    flops: int
    input_shape: tuple
    macs: int
    elementwise: int


def count_params(model):
    """Learnable scalars, BN scale/shift included (they train like any weight)."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def _forward_arity(model):
    sig = inspect.signature(model.forward)
    return sum(
        1
        for p in sig.parameters.values()
        if p.default is p.empty
        and p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)
    )


def _tally_flops(model, input_shape, batch):
    tally = {"macs": 0, "elementwise": 0}

    def hook(module, inputs, output):
        if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
            k = module.kernel_size[0] * module.kernel_size[1]
            tally["macs"] += output.numel() * k * (module.in_channels // module.groups)
        elif isinstance(module, nn.Linear):
            tally["macs"] += output.numel() * module.in_features
        elif isinstance(module, (nn.BatchNorm2d, nn.ReLU, nn.Sigmoid)):
            tally["elementwise"] += output.numel()
        if hasattr(module, "extra_ops"):
            tally["elementwise"] += module.extra_ops(inputs, output)

    handles = [m.register_forward_hook(hook) for m in model.modules()]
    x = torch.zeros((batch, *input_shape))
    was_training = model.training
    try:
        model.eval()
        with torch.no_grad():
            model(*[x] * _forward_arity(model))
    finally:
        for h in handles:
            h.remove()
        model.train(was_training)
    return tally


def estimate_flops(model, input_shape, batch=1):
    """FLOPs for one forward pass at (C, H, W) input shape."""
    tally = _tally_flops(model, input_shape, batch)
    return tally["macs"] + tally["elementwise"]


def complexity_report(model, input_shape=(3, 256, 256)):
    tally = _tally_flops(model, input_shape, batch=1)
    return ComplexityReport(
        params=count_params(model),
        flops=tally["macs"] + tally["elementwise"],
        input_shape=tuple(input_shape),
        macs=tally["macs"],
        elementwise=tally["elementwise"],
    )
