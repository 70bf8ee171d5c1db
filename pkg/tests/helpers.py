"""Shared test utilities: finite-difference oracle, mini plans, synthetic data."""

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from tunet.backbone import TrunkPlan
from tunet.data import TilePair, save_manifest, split_dataset, write_tiles

# narrow trunk whose widths keep every channel-attention reduction legal
MINI_PLAN = TrunkPlan(channels=(4, 16, 16, 16, 16), blocks=(1, 1, 1, 1, 1))


def check_gradient(fn, x, rtol, eps=1e-6):
    """Compare autograd against central finite differences at float64.

    fn must map x to a scalar tensor and be pure in x. Returns the relative
    error so callers can log it.
    """
    assert x.dtype == torch.float64, "finite differences need 64-bit inputs"
    xg = x.detach().clone().requires_grad_(True)
    fn(xg).backward()
    analytic = xg.grad.detach().clone()

    xd = x.detach().clone()
    flat = xd.reshape(-1)
    numeric = torch.zeros_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            h = eps * (1.0 + abs(orig))
            flat[i] = orig + h
            up = fn(xd).item()
            flat[i] = orig - h
            down = fn(xd).item()
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * h)
    numeric = numeric.reshape(x.shape)

    scale = max(analytic.abs().max().item(), numeric.abs().max().item(), 1e-12)
    rel = (analytic - numeric).abs().max().item() / scale
    assert rel < rtol, f"gradient mismatch: rel err {rel:.3e} >= {rtol:.0e}"
    return rel


def make_square_dataset(root, n=8, size=64, seed=7, counts=None):
    """n image pairs: smooth random background, one bright square inserted
    into the second image, label marking exactly the square."""
    rng = np.random.RandomState(seed)
    lo = max(3, round(size * 14 / 64))
    hi = max(lo + 1, round(size * 22 / 64))
    margin = max(1, size // 16)
    tiles = []
    for i in range(n):
        coarse = rng.randint(30, 160, size=(8, 8, 3)).astype(np.uint8)
        base = np.asarray(
            Image.fromarray(coarse).resize((size, size), Image.BILINEAR)
        )
        after = base.copy()
        label = np.zeros((size, size), np.uint8)
        side = rng.randint(lo, hi + 1)
        y = rng.randint(margin, size - side - margin + 1)
        x = rng.randint(margin, size - side - margin + 1)
        after[y : y + side, x : x + side] = rng.randint(180, 256, size=3)
        label[y : y + side, x : x + side] = 255
        tiles.append(TilePair(base, after, label, source_id=f"synth{i}"))
    ids = write_tiles(tiles, root)
    manifest = split_dataset(ids, seed=seed, explicit_counts=counts or (n, 0, 0))
    path = Path(root) / "manifest.tsv"
    save_manifest(manifest, path)
    return ids, path
