"""Training objective: stable sigmoid BCE plus dice, both on logits."""

from dataclasses import dataclass

import torch

from .errors import ShapeError, ValidationError


def check_target(logits, target):
    if not torch.is_tensor(logits) or not torch.is_tensor(target):
        raise ShapeError("logits and target must be tensors")
    if logits.shape != target.shape:
        raise ShapeError(
            f"logits {tuple(logits.shape)} and target {tuple(target.shape)} disagree"
        )
    if not torch.isfinite(logits).all():
        raise ValidationError("logits contain non-finite values")
    if not ((target == 0) | (target == 1)).all():
        raise ValidationError("target mask must be binary")


def sigmoid_bce(logits, target):
    """Pixel-mean BCE on logits: max(z,0) - z*y + log(1 + exp(-|z|)).

    This form never exponentiates a positive argument, so it stays finite for
    logits of any magnitude.
    """
    check_target(logits, target)
    z = logits
    y = target.to(logits.dtype)
    return (z.clamp_min(0) - z * y + torch.log1p(torch.exp(-z.abs()))).mean()


def dice_loss(logits, target, smooth=1.0):
    """1 - (2 sum(p*y) + eps) / (sum(p) + sum(y) + eps) with p = sigmoid(logits).

    The smoothing term defines the empty-empty case (loss 0 in the limit of a
    confident all-negative prediction) and keeps the loss in [0, 1].
    """
    check_target(logits, target)
    p = torch.sigmoid(logits)
    y = target.to(logits.dtype)
    inter = (p * y).sum()
    return 1.0 - (2.0 * inter + smooth) / (p.sum() + y.sum() + smooth)


@dataclass
class LossValue:
    """Joint objective with components kept separate for logging."""

    total: torch.Tensor
    bce: torch.Tensor
    dice: torch.Tensor


def total_loss(logits, target):
    bce = sigmoid_bce(logits, target)
    dice = dice_loss(logits, target)
    return LossValue(bce + dice, bce, dice)
