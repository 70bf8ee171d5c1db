"""Training loop, evaluation, prediction and error-map rendering."""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import TileFolder, load_manifest, normalize_image
from .errors import ConfigurationError, ShapeError, TrainingAborted, ValidationError
from .losses import total_loss
from .metrics import accumulate, compute_metrics
from .model import ModelConfig, build_variant


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    dataset_root: str = "."
    manifest: str = None  # path; None puts every tile in the training split
    learning_rate: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 100
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    threshold: float = 0.5
    trunk_weights: str = None
    early_stop_f1: float = None  # stop once monitored F1 reaches this
    eval_every: int = 1  # epochs between monitored-F1 evaluations
    save_every: int = 1  # epochs between rolling checkpoint writes

    def validate(self):
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if not 0 < self.threshold < 1:
            raise ConfigurationError("threshold must lie strictly in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("batch_size and max_epochs must be positive")
        self.model.validate()
        return self


def resolve_seed(cfg):
    """Config seed, unless TUNET_SEED is set in the environment."""
    env = os.environ.get("TUNET_SEED")
    return int(env) if env else cfg.seed


def _split_ids(cfg):
    if cfg.manifest:
        manifest = load_manifest(cfg.manifest)
        return manifest.ids("train"), manifest.ids("val")
    from .data import list_tiles

    return list_tiles(cfg.dataset_root), []


def _stack_batch(folder, indices):
    x1, x2, y = zip(*(folder[i] for i in indices))
    return torch.stack(x1), torch.stack(x2), torch.stack(y)


def threshold_mask(prob, threshold=0.5):
    """Strict 'greater than' rule: probability exactly at the threshold is unchanged."""
    return prob > threshold


def evaluate_model(model, folder, threshold=0.5, batch_size=8):
    """Run a model over a TileFolder and accumulate one global confusion matrix."""
    if len(folder) == 0:
        raise ConfigurationError("evaluation split is empty")
    was_training = model.training
    model.eval()
    counts = None
    with torch.no_grad():
        for at in range(0, len(folder), batch_size):
            x1, x2, y = _stack_batch(folder, range(at, min(at + batch_size, len(folder))))
            prob = model.decode(x1, x2)
            counts = accumulate(threshold_mask(prob, threshold), y.bool(), counts)
    model.train(was_training)
    return compute_metrics(counts)


@dataclass
class TrainResult:
    checkpoint: Checkpoint  # final state
    last_path: Path
    best_path: Path  # None if validation F1 was never computed
    history: list  # one dict per step: step, epoch, total, bce, dice
    best_f1: float
    steps: int


def train(cfg, plan=None):
    """Train per config; returns the final checkpoint plus the loss history.

    Determinism contract: same config, seed and machine reproduce the loss
    trajectory exactly. The monitored split is the manifest's validation split
    when present, else the training split. `plan` overrides the trunk widths
    (narrow models for experiments and tests).
    """
    cfg.validate()
    seed = resolve_seed(cfg)
    torch.manual_seed(seed)

    train_ids, val_ids = _split_ids(cfg)
    if not train_ids:
        raise ConfigurationError("training split is empty")
    train_folder = TileFolder(cfg.dataset_root, train_ids)
    monitor_folder = TileFolder(cfg.dataset_root, val_ids or train_ids)

    model = build_variant(
        cfg.model, trunk_weights=cfg.trunk_weights, seed=seed, plan=plan
    )
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999)
    )

    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    last_path = ckpt_dir / "last.npz"
    best_path = ckpt_dir / "best.npz"
    log_file = (ckpt_dir / "train_log.jsonl").open("w")

    shuffler = torch.Generator().manual_seed(seed)
    history = []
    best_f1 = -1.0
    saved_best = False
    step = 0
    stop = False
    epoch = 0
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            model.train()
            perm = torch.randperm(len(train_folder), generator=shuffler).tolist()
            for at in range(0, len(perm), cfg.batch_size):
                x1, x2, y = _stack_batch(train_folder, perm[at : at + cfg.batch_size])
                logits = model(x1, x2)
                loss = total_loss(logits, y)
                if not torch.isfinite(loss.total):
                    raise TrainingAborted(f"non-finite loss at step {step + 1}")
                optimizer.zero_grad()
                loss.total.backward()
                optimizer.step()
                step += 1
                rec = {
                    "step": step,
                    "epoch": epoch,
                    "total": loss.total.item(),
                    "bce": loss.bce.item(),
                    "dice": loss.dice.item(),
                }
                history.append(rec)
                log_file.write(json.dumps(rec) + "\n")
            log_file.flush()

            if cfg.save_every and (epoch % cfg.save_every == 0 or epoch == cfg.max_epochs):
                save_checkpoint(last_path, model, optimizer, epoch)
            if cfg.eval_every and (epoch % cfg.eval_every == 0 or epoch == cfg.max_epochs):
                report = evaluate_model(
                    model, monitor_folder, cfg.threshold, cfg.batch_size
                )
                if report.f1 > best_f1:
                    best_f1 = report.f1
                    save_checkpoint(
                        best_path, model, optimizer, epoch, extra={"best_f1": best_f1}
                    )
                    saved_best = True
                if cfg.early_stop_f1 is not None and report.f1 >= cfg.early_stop_f1:
                    stop = True
            if stop:
                break
    finally:
        log_file.close()
    save_checkpoint(last_path, model, optimizer, epoch)
    return TrainResult(
        checkpoint=load_checkpoint(last_path),
        last_path=last_path,
        best_path=best_path if saved_best else None,
        history=history,
        best_f1=best_f1,
        steps=step,
    )


def _as_model(model_or_checkpoint):
    if isinstance(model_or_checkpoint, (str, Path)):
        model_or_checkpoint = load_checkpoint(model_or_checkpoint)
    if isinstance(model_or_checkpoint, Checkpoint):
        return model_or_checkpoint.build_model()
    return model_or_checkpoint


def evaluate(checkpoint, cfg, split="test"):
    """MetricsReport for one manifest split under the run config's threshold."""
    model = _as_model(checkpoint)
    if cfg.manifest:
        ids = load_manifest(cfg.manifest).ids(split)
    else:
        from .data import list_tiles

        ids = list_tiles(cfg.dataset_root)
    if not ids:
        raise ConfigurationError(f"split {split!r} is empty")
    folder = TileFolder(cfg.dataset_root, ids)
    return evaluate_model(model, folder, cfg.threshold, cfg.batch_size)


def predict(checkpoint, image_a, image_b, threshold=0.5):
    """(binary mask, probability map) for one uint8 HWC RGB pair."""
    model = _as_model(checkpoint)
    a = np.asarray(image_a)
    b = np.asarray(image_b)
    if a.shape != b.shape:
        raise ShapeError(f"input shapes disagree: {a.shape} vs {b.shape}")
    h, w = a.shape[:2]
    if h % 16 or w % 16:
        raise ShapeError(
            f"input {h}x{w} is not divisible by 16; tile the input (e.g. with "
            f"tile_pair) and predict per tile"
        )
    model.eval()
    with torch.no_grad():
        prob = model.decode(
            normalize_image(a).unsqueeze(0), normalize_image(b).unsqueeze(0)
        )[0, 0].numpy()
    mask = threshold_mask(prob, threshold).astype(np.uint8)
    return mask, prob


# error-map palette: hits white, correct rejections black,
# false alarms green, misses purple
RENDER_COLORS = {
    "tp": (255, 255, 255),
    "tn": (0, 0, 0),
    "fp": (0, 255, 0),
    "fn": (128, 0, 128),
}


def render_map(pred, target):
    """RGB error map from two binary masks."""
    p = np.asarray(pred)
    y = np.asarray(target)
    if p.shape != y.shape:
        raise ShapeError(f"pred {p.shape} and target {y.shape} disagree")
    for name, m in (("pred", p), ("target", y)):
        if not np.isin(m, (0, 1)).all():
            raise ValidationError(f"{name} must be binary")
    p = p.astype(bool)
    y = y.astype(bool)
    out = np.zeros((*p.shape, 3), dtype=np.uint8)
    out[p & y] = RENDER_COLORS["tp"]
    out[p & ~y] = RENDER_COLORS["fp"]
    out[~p & y] = RENDER_COLORS["fn"]
    return out
