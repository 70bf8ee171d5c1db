"""Named-tensor checkpoint archive (.npz).

Every tensor is stored under a stable canonical name, independent of the
module attribute layout:

    t1t2.module{p}.block{q}.conv.weight / .conv.bias
    t1t2.module{p}.block{q}.bn.scale / .bn.shift / .bn.mean / .bn.var
    td.module{p}.block{q}.*            (triplet difference branch)
    mbsscca{p}.cam.w1 / .cam.w2 / .conv_pair.* / .conv_diff.*
    mbsscca{p}.sam_pair.conv7.* / .sam_diff.conv7.* / .reduce.* / .bn.*
    fuse{p}.conv.* / .bn.*             (siamese and plain-triplet fusion)
    decoder.module{m}.block{q}.*       (same block scheme as the trunk)
    decoder.up{m}.weight / .bias       (transpose convs)
    decoder.sam{m}.conv7.* ; decoder.cam{m}.mlp.w1 / .mlp.w2
    decoder.head.weight / .bias

Model config, epoch and format version travel in a __meta__ JSON entry;
optimizer state as optim.* arrays; the torch RNG state as rng.torch.
"""

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .encoder import SiameseEncoder, SingleEncoder, TripletEncoder
from .errors import CheckpointError
from .fusion import MBSSCA, PlainFusion
from .model import ChangeDetector, ModelConfig

FORMAT_VERSION = 1


def _bn_tensors(prefix, bn):
    yield f"{prefix}.scale", bn.weight
    yield f"{prefix}.shift", bn.bias
    yield f"{prefix}.mean", bn.running_mean
    yield f"{prefix}.var", bn.running_var


def _conv_tensors(prefix, conv):
    yield f"{prefix}.weight", conv.weight
    if conv.bias is not None:
        yield f"{prefix}.bias", conv.bias


def _block_tensors(prefix, block):
    yield from _conv_tensors(f"{prefix}.conv", block.conv)
    yield from _bn_tensors(f"{prefix}.bn", block.bn)


def _trunk_tensors(prefix, trunk):
    for p, stage in enumerate(trunk.stages, 1):
        for q, block in enumerate(stage.blocks, 1):
            yield from _block_tensors(f"{prefix}.module{p}.block{q}", block)


def _mbsscca_tensors(prefix, f):
    yield f"{prefix}.cam.w1", f.cam.w1.weight
    yield f"{prefix}.cam.w2", f.cam.w2.weight
    yield from _conv_tensors(f"{prefix}.conv_pair", f.conv_pair)
    yield from _conv_tensors(f"{prefix}.conv_diff", f.conv_diff)
    yield from _conv_tensors(f"{prefix}.sam_pair.conv7", f.sam_pair.conv7)
    yield from _conv_tensors(f"{prefix}.sam_diff.conv7", f.sam_diff.conv7)
    yield from _conv_tensors(f"{prefix}.reduce", f.reduce)
    yield from _bn_tensors(f"{prefix}.bn", f.bn)


def _fuse_tensors(prefix, f):
    yield from _conv_tensors(f"{prefix}.conv", f.conv)
    yield from _bn_tensors(f"{prefix}.bn", f.bn)


def named_model_tensors(model):
    """(canonical name, tensor) pairs for a ChangeDetector, deterministic order."""
    enc = model.encoder
    yield from _trunk_tensors("t1t2", enc.t1t2)
    if isinstance(enc, TripletEncoder):
        yield from _trunk_tensors("td", enc.td)
        for p, f in enumerate(enc.fusions, 1):
            if isinstance(f, MBSSCA):
                yield from _mbsscca_tensors(f"mbsscca{p}", f)
            else:
                yield from _fuse_tensors(f"fuse{p}", f)
    elif isinstance(enc, SiameseEncoder):
        for p, f in enumerate(enc.fuse, 1):
            yield from _fuse_tensors(f"fuse{p}", f)
    elif not isinstance(enc, SingleEncoder):
        raise CheckpointError(f"unknown encoder type {type(enc).__name__}")

    dec = model.decoder
    for m, stage in enumerate(dec.stages, 1):
        for q, block in enumerate(stage.blocks, 1):
            yield from _block_tensors(f"decoder.module{m}.block{q}", block)
    for m, up in enumerate(dec.ups, 1):
        yield from _conv_tensors(f"decoder.up{m}", up)
    if dec.sams is not None:
        for m, sam in enumerate(dec.sams, 1):
            yield from _conv_tensors(f"decoder.sam{m}.conv7", sam.conv7)
        for m, cam in enumerate(dec.cams, 1):
            yield f"decoder.cam{m}.mlp.w1", cam.w1.weight
            yield f"decoder.cam{m}.mlp.w2", cam.w2.weight
    yield from _conv_tensors("decoder.head", dec.head)


def model_to_arrays(model):
    return {n: t.detach().cpu().numpy().copy() for n, t in named_model_tensors(model)}


def load_arrays_into(model, arrays):
    """Strict restore: every expected tensor present with the exact shape."""
    expected = dict(named_model_tensors(model))
    missing = sorted(set(expected) - set(arrays))
    if missing:
        raise CheckpointError(f"checkpoint is missing tensor: {missing[0]}")
    with torch.no_grad():
        for name, target in expected.items():
            src = np.asarray(arrays[name])
            if tuple(src.shape) != tuple(target.shape):
                raise CheckpointError(
                    f"{name}: stored shape {tuple(src.shape)} does not match "
                    f"model shape {tuple(target.shape)}"
                )
            target.copy_(torch.from_numpy(src.astype(np.float32, copy=False)))
    return model


def _optimizer_arrays(optimizer):
    arrays = {}
    state = optimizer.state_dict()["state"]
    for idx, entry in state.items():
        for key, val in entry.items():
            arrays[f"optim.{idx}.{key}"] = (
                val.detach().cpu().numpy() if torch.is_tensor(val) else np.asarray(val)
            )
    return arrays


def save_checkpoint(path, model, optimizer=None, epoch=0, extra=None):
    cfg = asdict(model.config)
    meta = {
        "format_version": FORMAT_VERSION,
        "config": cfg,
        "epoch": int(epoch),
        "plan": {
            "channels": list(model.plan.channels),
            "blocks": list(model.plan.blocks),
            "in_channels": model.plan.in_channels,
        },
    }
    if extra:
        meta.update(extra)
    arrays = model_to_arrays(model)
    if optimizer is not None:
        arrays.update(_optimizer_arrays(optimizer))
        meta["optimizer"] = "adam"
    arrays["rng.torch"] = torch.get_rng_state().numpy()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, __meta__=np.asarray(json.dumps(meta)), **arrays)
    return path


class Checkpoint:
    """A loaded archive: metadata plus raw arrays, buildable into a model."""

    def __init__(self, meta, arrays, path=None):
        self.meta = meta
        self.arrays = arrays
        self.path = path

    @property
    def config(self):
        c = dict(self.meta["config"])
        c["input_size"] = tuple(c["input_size"])
        return ModelConfig(**c)

    @property
    def epoch(self):
        return self.meta["epoch"]

    def build_model(self):
        from .backbone import TrunkPlan

        plan_meta = self.meta.get("plan")
        plan = (
            TrunkPlan(
                tuple(plan_meta["channels"]),
                tuple(plan_meta["blocks"]),
                plan_meta["in_channels"],
            )
            if plan_meta
            else None
        )
        model = ChangeDetector(self.config, plan=plan)
        load_arrays_into(model, self.arrays)
        model.eval()
        return model

    def restore_optimizer(self, optimizer):
        """Install saved Adam moments into a freshly built optimizer."""
        if self.meta.get("optimizer") != "adam":
            raise CheckpointError("checkpoint holds no optimizer state")
        sd = optimizer.state_dict()
        state = {}
        for name, arr in self.arrays.items():
            if not name.startswith("optim."):
                continue
            _, idx, key = name.split(".", 2)
            state.setdefault(int(idx), {})[key] = torch.from_numpy(np.asarray(arr))
        sd["state"] = state
        optimizer.load_state_dict(sd)
        return optimizer

    def restore_rng(self):
        torch.set_rng_state(torch.from_numpy(self.arrays["rng.torch"]).to(torch.uint8))


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z.files:
            raise CheckpointError(f"{path} has no __meta__ entry")
        meta = json.loads(str(z["__meta__"]))
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {meta.get('format_version')!r}"
        )
    return Checkpoint(meta, arrays, path)
