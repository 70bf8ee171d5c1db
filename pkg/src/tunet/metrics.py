"""Global confusion counts and OA / precision / recall / F1.

Counts are accumulated over all evaluated pixels into one confusion matrix
(micro accumulation); shards merge by fieldwise addition. Changed pixels are
the positive class.
"""

from dataclasses import dataclass

import torch

from .errors import ShapeError, ValidationError


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other):
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def _as_binary(x, name):
    t = torch.as_tensor(x)
    if not ((t == 0) | (t == 1)).all():
        raise ValidationError(f"{name} must be binary")
    return t.bool()


def accumulate(pred, target, acc=None):
    """Fold a pred/target pair into the running counts; returns the new counts."""
    p = _as_binary(pred, "pred")
    y = _as_binary(target, "target")
    if p.shape != y.shape:
        raise ShapeError(
            f"pred {tuple(p.shape)} and target {tuple(y.shape)} disagree"
        )
    batch = ConfusionCounts(
        tp=int((p & y).sum()),
        fp=int((p & ~y).sum()),
        fn=int((~p & y).sum()),
        tn=int((~p & ~y).sum()),
    )
    return batch if acc is None else acc + batch


def f1_score(pre, rec):
    """Harmonic mean; works on fractions or percentages alike."""
    if pre + rec == 0:
        return 0.0
    return 2.0 * pre * rec / (pre + rec)


@dataclass
class MetricsReport:
    """Metrics as fractions in [0, 1]; `undefined` flags zero-denominator cases."""

    oa: float
    pre: float
    rec: float
    f1: float
    counts: ConfusionCounts
    undefined: tuple = ()

    def to_dict(self):
        """Flat JSON-compatible record with percentages at two decimals."""
        d = {
            "oa": round(100.0 * self.oa, 2),
            "pre": round(100.0 * self.pre, 2),
            "rec": round(100.0 * self.rec, 2),
            "f1": round(100.0 * self.f1, 2),
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "fn": self.counts.fn,
            "tn": self.counts.tn,
        }
        if self.undefined:
            d["undefined"] = list(self.undefined)
        return d


def compute_metrics(acc):
    """OA/Pre/Rec/F1 from counts; zero-denominator metrics report 0 and a flag."""
    if acc.total == 0:
        raise ValidationError("no pixels accumulated")
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    oa = (acc.tp + acc.tn) / acc.total
    pre = ratio(acc.tp, acc.tp + acc.fp, "pre")
    rec = ratio(acc.tp, acc.tp + acc.fn, "rec")
    if pre + rec == 0:
        undefined.append("f1")
    f1 = f1_score(pre, rec)
    return MetricsReport(oa, pre, rec, f1, acc, tuple(undefined))
