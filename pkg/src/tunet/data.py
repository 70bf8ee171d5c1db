"""Tiling of co-registered image pairs, split manifests, and sample loading.

Dataset layout on disk: <root>/A/*.png, <root>/B/*.png, <root>/label/*.png,
filename-matched. Labels are stored as {0, 255} and binarized at load time.
"""

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import IngestionError, ShapeError, ValidationError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

SPLIT_NAMES = ("train", "val", "test")


def tile_grid(height, width, tile_size=256):
    """Anchor (row, col, y, x) for a ceil(H/t) x ceil(W/t) grid.

    Interior tiles are disjoint; when a dimension is not a multiple of the
    tile size, the last row/column is shifted flush against the border and
    overlaps inward. Padding would fabricate pixels and flooring would drop
    the border strip entirely.
    """
    if tile_size < 1:
        raise ShapeError("tile_size must be positive")
    if height < tile_size or width < tile_size:
        raise ShapeError(
            f"image {height}x{width} is smaller than tile size {tile_size}"
        )
    rows = math.ceil(height / tile_size)
    cols = math.ceil(width / tile_size)
    ys = [min(r * tile_size, height - tile_size) for r in range(rows)]
    xs = [min(c * tile_size, width - tile_size) for c in range(cols)]
    return [(r, c, ys[r], xs[c]) for r in range(rows) for c in range(cols)]


@dataclass
class TilePair:
    """One 8-bit RGB tile pair with its binary change label and provenance."""

    image_a: np.ndarray
    image_b: np.ndarray
    label: np.ndarray
    source_id: str = "pair"
    row: int = 0
    col: int = 0

    @property
    def tile_id(self):
        return f"{self.source_id}_r{self.row}_c{self.col}"


def _as_rgb(arr, name):
    a = np.asarray(arr)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ShapeError(f"{name} must be HxWx3, got {a.shape}")
    return a


def _as_mask(arr):
    m = np.asarray(arr)
    if m.ndim == 3 and m.shape[2] == 1:
        m = m[..., 0]
    if m.ndim != 2:
        raise ShapeError(f"label must be HxW, got {m.shape}")
    return m


def tile_pair(image_a, image_b, label, tile_size=256, source_id="pair"):
    """Cut one co-registered (a, b, label) triple into a list of TilePairs."""
    a = _as_rgb(image_a, "image_a")
    b = _as_rgb(image_b, "image_b")
    m = _as_mask(label)
    if not (a.shape[:2] == b.shape[:2] == m.shape[:2]):
        raise ShapeError(
            f"pair/label dimensions disagree: {a.shape[:2]} / {b.shape[:2]} / {m.shape[:2]}"
        )
    if m.max(initial=0) <= 1:
        m = (m * 255).astype(np.uint8)
    tiles = []
    for r, c, y, x in tile_grid(a.shape[0], a.shape[1], tile_size):
        sel = (slice(y, y + tile_size), slice(x, x + tile_size))
        tiles.append(
            TilePair(a[sel].copy(), b[sel].copy(), m[sel].copy(), source_id, r, c)
        )
    return tiles


@dataclass
class SplitManifest:
    """Ordered split -> tile-id assignment; regeneration is seed-stable."""

    splits: dict
    seed: int
    ratios: tuple = None

    def ids(self, split):
        return list(self.splits.get(split, ()))

    @property
    def counts(self):
        return {name: len(ids) for name, ids in self.splits.items()}

    def all_ids(self):
        return [i for ids in self.splits.values() for i in ids]


def _ratio_counts(total, ratios):
    # largest-remainder apportionment, index order breaking ties
    weights = [r / sum(ratios) for r in ratios]
    counts = [int(math.floor(total * w)) for w in weights]
    rema = sorted(
        range(len(ratios)),
        key=lambda i: (-(total * weights[i] - counts[i]), i),
    )
    for i in rema[: total - sum(counts)]:
        counts[i] += 1
    return counts


def split_dataset(tiles, ratios=(7, 1, 2), seed=0, explicit_counts=None):
    """Seeded shuffle then partition into train/val/test.

    explicit_counts overrides the rounded ratio sizes (published split sizes
    rarely match exact ratio arithmetic).
    """
    ids = [t if isinstance(t, str) else t.tile_id for t in tiles]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate tile identifiers")
    if explicit_counts is not None:
        counts = list(explicit_counts)
        if sum(counts) != len(ids):
            raise ValidationError(
                f"explicit counts sum to {sum(counts)}, but there are {len(ids)} tiles"
            )
    else:
        if len(ratios) != len(SPLIT_NAMES) or any(r < 0 for r in ratios) or sum(ratios) <= 0:
            raise ValidationError(f"bad split ratios {ratios}")
        counts = _ratio_counts(len(ids), ratios)
    order = np.random.RandomState(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    splits, at = {}, 0
    for name, n in zip(SPLIT_NAMES, counts):
        splits[name] = shuffled[at : at + n]
        at += n
    return SplitManifest(splits, seed, tuple(ratios) if explicit_counts is None else None)


def save_manifest(manifest, path):
    lines = [f"# seed={manifest.seed}"]
    if manifest.ratios:
        lines.append("# ratios=" + ":".join(str(r) for r in manifest.ratios))
    lines.append(
        "# counts=" + ",".join(f"{k}:{v}" for k, v in manifest.counts.items())
    )
    for name in manifest.splits:
        for tid in manifest.splits[name]:
            lines.append(f"{name}\t{tid}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path):
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"manifest not found: {path}")
    seed, ratios = 0, None
    splits = {}
    for ln, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = re.search(r"seed=(\d+)", line)
            if m:
                seed = int(m.group(1))
            m = re.search(r"ratios=([\d:]+)", line)
            if m:
                ratios = tuple(int(r) for r in m.group(1).split(":"))
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise IngestionError(f"{path}:{ln}: expected 'split<TAB>tile_id'")
        splits.setdefault(parts[0], []).append(parts[1])
    return SplitManifest(splits, seed, ratios)


def normalize_image(arr):
    """uint8 HWC RGB -> float32 CHW tensor, (v/255 - mean)/std per channel."""
    a = _as_rgb(arr, "image").astype(np.float32) / 255.0
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)
    std = np.asarray(IMAGENET_STD, dtype=np.float32)
    return torch.from_numpy(((a - mean) / std).transpose(2, 0, 1).copy())


def binarize_label(arr):
    """uint8 HW mask -> float32 (1, H, W) tensor in {0, 1}, threshold v > 127."""
    m = _as_mask(arr)
    return torch.from_numpy((m > 127).astype(np.float32)[None, ...])


def load_sample(tile):
    """TilePair -> (x1, x2, y) model-ready tensors."""
    return (
        normalize_image(tile.image_a),
        normalize_image(tile.image_b),
        binarize_label(tile.label),
    )


def write_tiles(tiles, root):
    """Write tiles as PNGs under <root>/A, B, label; returns the tile ids."""
    root = Path(root)
    for sub in ("A", "B", "label"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    ids = []
    for t in tiles:
        Image.fromarray(t.image_a).save(root / "A" / f"{t.tile_id}.png")
        Image.fromarray(t.image_b).save(root / "B" / f"{t.tile_id}.png")
        Image.fromarray(t.label).save(root / "label" / f"{t.tile_id}.png")
        ids.append(t.tile_id)
    return ids


def _read_png(path, mode):
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert(mode))
    except (OSError, ValueError) as e:
        raise IngestionError(f"cannot read {path}: {e}") from e


def read_tile(root, tile_id):
    """Load one tile triple from disk by id."""
    root = Path(root)
    a = _read_png(root / "A" / f"{tile_id}.png", "RGB")
    b = _read_png(root / "B" / f"{tile_id}.png", "RGB")
    label = _read_png(root / "label" / f"{tile_id}.png", "L")
    m = re.fullmatch(r"(.+)_r(\d+)_c(\d+)", tile_id)
    src, r, c = (m.group(1), int(m.group(2)), int(m.group(3))) if m else (tile_id, 0, 0)
    return TilePair(a, b, label, src, r, c)


def list_tiles(root):
    """Sorted tile ids present in all three of A/, B/, label/."""
    root = Path(root)
    if not (root / "A").is_dir():
        raise IngestionError(f"no A/ directory under {root}")
    stems = sorted(p.stem for p in (root / "A").glob("*.png"))
    for tid in stems:
        for sub in ("B", "label"):
            if not (root / sub / f"{tid}.png").exists():
                raise IngestionError(f"missing {root / sub / (tid + '.png')}")
    return stems


class TileFolder:
    """Indexable view over tiles on disk, optionally restricted to given ids."""

    def __init__(self, root, ids=None):
        self.root = Path(root)
        self.ids = list(ids) if ids is not None else list_tiles(root)

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i):
        return load_sample(read_tile(self.root, self.ids[i]))
