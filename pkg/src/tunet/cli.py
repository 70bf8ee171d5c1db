"""Command-line front end.

Config files are flat `key = value` text; keys mirror RunConfig/ModelConfig:

    branches, use_mbsscca, use_decoder_attention, input_size, pretrained_t1t2,
    dataset_root, manifest, learning_rate, batch_size, max_epochs, seed,
    checkpoint_dir, threshold, trunk_weights, early_stop_f1, eval_every,
    save_every

The TUNET_SEED environment variable overrides the configured seed.
"""

import argparse
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .complexity import complexity_report
from .data import (
    save_manifest,
    split_dataset,
    tile_pair,
    write_tiles,
)
from .errors import ConfigurationError, IngestionError
from .harness import RunConfig, evaluate, predict, render_map, train
from .model import ModelConfig, VARIANTS, build_variant

_BOOLS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_bool(v):
    try:
        return _BOOLS[v.strip().lower()]
    except KeyError:
        raise ConfigurationError(f"expected a boolean, got {v!r}") from None


def _parse_size(v):
    parts = [p for p in v.lower().replace("x", " ").split() if p]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ConfigurationError(f"expected HxW, got {v!r}")
    return (int(parts[0]), int(parts[1]))


_MODEL_KEYS = {
    "branches": str,
    "use_mbsscca": _parse_bool,
    "use_decoder_attention": _parse_bool,
    "input_size": _parse_size,
    "pretrained_t1t2": _parse_bool,
}
_RUN_KEYS = {
    "dataset_root": str,
    "manifest": str,
    "learning_rate": float,
    "batch_size": int,
    "max_epochs": int,
    "seed": int,
    "checkpoint_dir": str,
    "threshold": float,
    "trunk_weights": str,
    "early_stop_f1": float,
    "eval_every": int,
    "save_every": int,
}


def config_from_dict(kv):
    model_kwargs, run_kwargs = {}, {}
    for key, raw in kv.items():
        if key in _MODEL_KEYS:
            model_kwargs[key] = _MODEL_KEYS[key](raw)
        elif key in _RUN_KEYS:
            run_kwargs[key] = _RUN_KEYS[key](raw)
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    return RunConfig(model=ModelConfig(**model_kwargs), **run_kwargs)


def parse_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    kv = {}
    for ln, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{ln}: expected 'key = value'")
        key, val = line.split("=", 1)
        kv[key.strip()] = val.strip()
    return config_from_dict(kv)


def _read_image(path, mode):
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert(mode))
    except (OSError, ValueError) as e:
        raise IngestionError(f"cannot read {path}: {e}") from e


def _parse_counts(v):
    return tuple(int(c) for c in v.split(","))


def _parse_ratios(v):
    return tuple(int(r) for r in v.split(":"))


def cmd_prepare(args):
    src = Path(args.src)
    stems = sorted(p.stem for p in (src / "A").glob("*"))
    if not stems:
        raise IngestionError(f"no source images under {src / 'A'}")
    ids = []
    for stem in stems:
        a = _read_image(next((src / "A").glob(stem + ".*")), "RGB")
        b = _read_image(next((src / "B").glob(stem + ".*")), "RGB")
        label = _read_image(next((src / "label").glob(stem + ".*")), "L")
        tiles = tile_pair(a, b, label, tile_size=args.tile_size, source_id=stem)
        ids.extend(write_tiles(tiles, args.out))
    manifest = split_dataset(
        ids, ratios=args.ratios, seed=args.seed, explicit_counts=args.counts
    )
    manifest_path = Path(args.out) / "manifest.tsv"
    save_manifest(manifest, manifest_path)
    print(
        json.dumps(
            {"tiles": len(ids), "counts": manifest.counts, "manifest": str(manifest_path)}
        )
    )


def cmd_train(args):
    cfg = parse_config(args.config)
    if args.checkpoint_dir:
        cfg.checkpoint_dir = args.checkpoint_dir
    if args.max_epochs:
        cfg.max_epochs = args.max_epochs
    result = train(cfg)
    print(
        json.dumps(
            {
                "steps": result.steps,
                "epochs": result.checkpoint.epoch,
                "best_f1": None if result.best_f1 < 0 else round(result.best_f1, 4),
                "last": str(result.last_path),
                "best": None if result.best_path is None else str(result.best_path),
            }
        )
    )


def cmd_eval(args):
    cfg = parse_config(args.config)
    report = evaluate(args.checkpoint, cfg, split=args.split)
    text = json.dumps(report.to_dict())
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_predict(args):
    a = _read_image(args.a, "RGB")
    b = _read_image(args.b, "RGB")
    mask, prob = predict(args.checkpoint, a, b, threshold=args.threshold)
    Image.fromarray(mask * 255).save(args.out_mask)
    if args.out_prob:
        Image.fromarray(np.round(prob * 255).astype(np.uint8)).save(args.out_prob)
    print(
        json.dumps(
            {"changed": int(mask.sum()), "pixels": int(mask.size), "mask": args.out_mask}
        )
    )


def cmd_render(args):
    pred = _read_image(args.pred, "L") > 127
    target = _read_image(args.target, "L") > 127
    Image.fromarray(render_map(pred.astype(np.uint8), target.astype(np.uint8))).save(
        args.out
    )
    print(json.dumps({"render": args.out}))


def cmd_complexity(args):
    if args.config:
        model_cfg = parse_config(args.config).model
    else:
        if args.variant not in VARIANTS:
            raise ConfigurationError(
                f"unknown variant {args.variant!r}; pick one of {', '.join(VARIANTS)}"
            )
        model_cfg = VARIANTS[args.variant]
    size = _parse_size(args.input_size)
    model = build_variant(model_cfg, seed=0)
    rep = complexity_report(model, (3, *size))
    print(
        json.dumps(
            {
                "params": rep.params,
                "params_millions": round(rep.params / 1e6, 2),
                "flops": rep.flops,
                "flops_giga": round(rep.flops / 1e9, 2),
                "macs": rep.macs,
                "elementwise": rep.elementwise,
                "input_shape": list(rep.input_shape),
            }
        )
    )


def cmd_variants(args):
    for name, cfg in VARIANTS.items():
        print(
            f"{name:16s} branches={cfg.branches:8s} "
            f"mbsscca={'y' if cfg.use_mbsscca else 'n'} "
            f"decoder_attention={'y' if cfg.use_decoder_attention else 'n'}"
        )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tunet", description="Triplet-encoder UNet change detection"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="tile raw scenes and write a split manifest")
    p.add_argument("--src", required=True, help="directory with A/, B/, label/ scenes")
    p.add_argument("--out", required=True, help="output dataset root")
    p.add_argument("--tile-size", type=int, default=256)
    p.add_argument("--ratios", type=_parse_ratios, default=(7, 1, 2))
    p.add_argument("--counts", type=_parse_counts, default=None,
                   help="explicit train,val,test sizes overriding the ratios")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model per config file")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint-dir", default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None, help="also write the JSON record here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict a change mask for one image pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out-mask", required=True)
    p.add_argument("--out-prob", default=None)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("render", help="render a TP/TN/FP/FN error map")
    p.add_argument("--pred", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("complexity", help="parameter and FLOP counts")
    p.add_argument("--variant", default="tunet")
    p.add_argument("--config", default=None)
    p.add_argument("--input-size", default="256x256")
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("variants", help="list the ablation-grid configurations")
    p.set_defaults(func=cmd_variants)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
