"""Command-line entry point: ``auvit {train,eval,bias,scheme,attention,synth}``.

Exit codes: 0 success, 1 runtime error, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .aubranch import build_scheme
from .biasmeter import bias_report, prepare_image, write_report
from .dataio import AuVocabulary, load_manifest, read_image, write_pgm
from .errors import AuvitError, ConfigError, InvariantViolation, ParseError, ShapeMismatch, UnsupportedScheme
from .model import AUViT, ModelConfig, analytic_param_count
from .synthetic import EXPRESSIONS, make_auxiliary, make_target, write_dataset
from .tensor import load_archive, no_grad, save_archive
from .trainer import TrainConfig, evaluate, load_checkpoint, train, worker_count

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
_TOP_KEYS = {"model", "train", "data", "output_dir"}
_DATA_KEYS = {"target_manifest", "aux_manifest", "eval_manifest", "augmentation"}


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    data: dict
    output_dir: Path
    base: Path = field(default=Path("."))

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": {k: (str(v) if isinstance(v, Path) else v) for k, v in self.data.items()},
            "output_dir": str(self.output_dir),
        }


def _resolve(base: Path, value, name: str, must_exist: bool = True) -> Optional[Path]:
    if value is None:
        return None
    if not isinstance(value, str):
        raise ConfigError("expected a path string", name)
    path = Path(value)
    if not path.is_absolute():
        path = base / path
    if must_exist and not path.exists():
        raise ConfigError(f"file not found: {path}", name)
    return path


def _scoped(exc: ConfigError, section: str) -> ConfigError:
    name = exc.field or section
    if not name.startswith(section + "."):
        name = f"{section}.{name}"
    return ConfigError(exc.reason, name)


def load_run_config(path, seed: Optional[int] = None) -> RunConfig:
    """Parse a run config; unknown keys and missing files are :class:`ConfigError`."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}", "--config")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}", "--config") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", "--config")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", unknown[0])
    base = path.parent
    data = dict(raw.get("data") or {})
    unknown = sorted(set(data) - _DATA_KEYS)
    if unknown:
        raise ConfigError(f"unknown data keys {unknown}", f"data.{unknown[0]}")
    if "target_manifest" not in data and "aux_manifest" not in data:
        raise ConfigError("need a target or an auxiliary manifest", "data.target_manifest")
    resolved = {}
    for key in ("target_manifest", "aux_manifest", "eval_manifest"):
        resolved[key] = _resolve(base, data.get(key), f"data.{key}")
    train_raw = dict(raw.get("train") or {})
    if "augment" in train_raw:
        raise ConfigError("augmentation belongs under data.augmentation", "train.augment")
    if "augmentation" in data:
        if not isinstance(data["augmentation"], dict):
            raise ConfigError("expected an object", "data.augmentation")
        train_raw["augment"] = data["augmentation"]
    if seed is not None:
        train_raw["seed"] = seed
    model_raw = dict(raw.get("model") or {})
    if "num_classes" not in model_raw and resolved["target_manifest"] is not None:
        m = load_manifest(resolved["target_manifest"], load_pixels=False)
        model_raw["num_classes"] = max(1, m.num_classes)
    try:
        model_cfg = ModelConfig.from_dict(model_raw)
    except ConfigError as exc:
        raise _scoped(exc, "model") from None
    except (TypeError, UnsupportedScheme) as exc:
        raise ConfigError(str(exc), "model") from None
    try:
        model_cfg.region_scheme()
    except UnsupportedScheme as exc:
        raise ConfigError(str(exc), "model.scheme") from None
    try:
        train_cfg = TrainConfig.from_dict(train_raw)
    except ConfigError as exc:
        raise _scoped(exc, "train") from None
    except TypeError as exc:
        raise ConfigError(str(exc), "train") from None
    augmentation = {k: (list(v) if isinstance(v, tuple) else v)
                    for k, v in train_cfg.to_dict()["augment"].items()}
    resolved["augmentation"] = augmentation
    out = _resolve(base, raw.get("output_dir", "runs/default"), "output_dir", must_exist=False)
    return RunConfig(model_cfg, train_cfg, resolved, out, base)


def _load_manifests(cfg: RunConfig) -> tuple:
    vocab = cfg.model.vocab
    target = aux = evalm = None
    if cfg.data["target_manifest"] is not None:
        target = load_manifest(cfg.data["target_manifest"], vocab, role="target")
    if cfg.data["aux_manifest"] is not None:
        aux = load_manifest(cfg.data["aux_manifest"], vocab, role="auxiliary")
    if cfg.data["eval_manifest"] is not None:
        evalm = load_manifest(cfg.data["eval_manifest"], vocab, role="target")
    return target, aux, evalm


# -- commands ------------------------------------------------------------------

def cmd_train(args) -> int:
    if not args.config:
        raise ConfigError("train needs --config", "--config")
    cfg = load_run_config(args.config, args.seed)
    model = AUViT(cfg.model, np.random.default_rng([cfg.train.seed, 0]))
    count = model.num_parameters()
    analytic = analytic_param_count(cfg.model)
    if args.dry_run:
        print(json.dumps({"config": cfg.to_dict(), "parameters": count, "analytic_parameters": analytic},
                         indent=2, sort_keys=True))
        return EXIT_OK
    target, aux, evalm = _load_manifests(cfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    result = train(target, aux, cfg.model, cfg.train, out, evalm, model=model)
    summary = {"epochs": len(result.reports), "best_accuracy": result.best_accuracy,
               "final_accuracy": result.reports[-1].target_accuracy, "parameters": count}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _remap_labels(manifest, classes) -> None:
    if not classes or list(manifest.expression_classes) == list(classes):
        return
    index = {c: i for i, c in enumerate(classes)}
    missing = [c for c in manifest.expression_classes if c not in index]
    if missing:
        raise ConfigError(f"manifest classes {missing} unknown to the checkpoint", "--manifest")
    for rec in manifest.records:
        if rec.expr_label is not None:
            rec.expr_label = index[manifest.expression_classes[rec.expr_label]]
    manifest.expression_classes = tuple(classes)


def _open_checkpoint(args) -> tuple:
    path = Path(args.checkpoint)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}", "--checkpoint")
    try:
        if args.config:
            cfg = load_run_config(args.config, args.seed)
            state, meta = load_archive(path)
            model = AUViT(cfg.model)
            model.load_state_dict(state)
        else:
            model, meta = load_checkpoint(path)
    except ShapeMismatch as exc:
        raise ConfigError(f"checkpoint does not fit the model: {exc}", "--checkpoint") from None
    except ParseError as exc:
        raise ConfigError(str(exc), "--checkpoint") from None
    return model, meta


def cmd_eval(args) -> int:
    model, meta = _open_checkpoint(args)
    mpath = Path(args.manifest)
    if not mpath.exists():
        raise ConfigError(f"manifest not found: {mpath}", "--manifest")
    manifest = load_manifest(mpath, model.vocab)
    _remap_labels(manifest, meta.get("classes"))
    if args.dry_run:
        print(json.dumps({"checkpoint": str(args.checkpoint), "manifest": str(mpath),
                          "records": len(manifest), "threads": worker_count()}, sort_keys=True))
        return EXIT_OK
    result = evaluate(model, manifest)
    report = result.to_dict(manifest.expression_classes)
    text = json.dumps(report, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_bias(args) -> int:
    if len(args.manifests) < 2:
        raise ConfigError("need at least two manifests", "manifests")
    manifests = []
    for p in args.manifests:
        if not Path(p).exists():
            raise ConfigError(f"manifest not found: {p}", "manifests")
        m = load_manifest(p, AuVocabulary.default(), load_pixels=not args.no_images)
        if not any(r.has_au for r in m.records):
            raise ConfigError(f"manifest {p} carries no AU annotations", "manifests")
        manifests.append(m)
    report = bias_report(manifests, with_images=not args.no_images, crop_ratio=args.crop_ratio)
    if args.dry_run:
        print(json.dumps(report.to_dict()["expressions"], indent=2, sort_keys=True))
        return EXIT_OK
    written = write_report(report, args.out)
    print(json.dumps({"json": str(written["json"]), "csv": len(written["csv"]), "png": len(written["png"])},
                     sort_keys=True))
    return EXIT_OK


def cmd_scheme(args) -> int:
    try:
        scheme = build_scheme(args.n)
    except UnsupportedScheme as exc:
        raise ConfigError(str(exc), "n") from None
    rows, cols = args.grid
    ascii_map = scheme.ascii_map(rows, cols)
    if not args.dry_run and args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        scheme.save(out)
        out.with_suffix(".txt").write_text(ascii_map + "\n")
    print(ascii_map)
    return EXIT_OK


def attention_maps(model: AUViT, image: np.ndarray) -> tuple:
    """Per block ``[heads, rows, cols]`` maps: class-token attention to each patch
    (vanilla), or the mean attention each patch receives (cnn_vit). Returns
    ``(maps, raw)`` where ``raw`` holds the full row-stochastic matrices."""
    modules = model.attention_modules()
    for m in modules:
        m.record_attention = True
    try:
        with no_grad():
            model.exp_logits(image[None])
    finally:
        for m in modules:
            m.record_attention = False
    maps, raw = [], []
    grids = _attention_grids(model)
    for m, grid in zip(modules, grids):
        attn = m.last_attention[0]  # [heads, T, T]
        raw.append(attn)
        if model.cfg.variant == "vanilla":
            prefix = 1 + int(model.cfg.au_token_baseline)
            per_patch = attn[:, 0, prefix:]
        else:
            per_patch = attn.mean(axis=1)
        maps.append(per_patch.reshape(attn.shape[0], *grid))
    return maps, raw


def _attention_grids(model: AUViT) -> list:
    cfg = model.cfg
    if cfg.variant == "vanilla":
        g = cfg.image_size // cfg.patch_size
        return [(g, g)] * cfg.depth
    stage_cfg = cfg.stage_config()
    grids = []
    for k, depth in enumerate(cfg.stage_depths):
        h, w, _ = stage_cfg.dims_after(k)
        grids.extend([(h, w)] * depth)
    return grids


def tile_attention(maps: list, scale: int = 8, pad: int = 1) -> np.ndarray:
    """Blocks as rows, heads as columns; each tile rescaled to its own maximum."""
    side_h = max(m.shape[1] for m in maps) * scale
    side_w = max(m.shape[2] for m in maps) * scale
    heads = max(m.shape[0] for m in maps)
    canvas = np.ones((len(maps) * (side_h + pad) + pad, heads * (side_w + pad) + pad))
    for i, block in enumerate(maps):
        for j, tile in enumerate(block):
            ry, rx = side_h // tile.shape[0], side_w // tile.shape[1]
            big = np.kron(tile, np.ones((ry, rx)))
            peak = big.max()
            big = big / peak if peak > 0 else big
            y, x = pad + i * (side_h + pad), pad + j * (side_w + pad)
            canvas[y:y + big.shape[0], x:x + big.shape[1]] = big
    return canvas


def cmd_attention(args) -> int:
    model, _ = _open_checkpoint(args)
    ipath = Path(args.image)
    if not ipath.exists():
        raise ConfigError(f"image not found: {ipath}", "--image")
    if model.cfg.variant == "cnn_vit" and model.cfg.cnn_embedding == "features":
        raise ConfigError("attention export needs an image-input model", "--checkpoint")
    image = read_image(ipath)
    size = model.cfg.image_size
    if image.shape[1:] != (size, size):
        image = np.clip(prepare_image(image, (size, size)), 0.0, 1.0)
    maps, raw = attention_maps(model, image)
    canvas = tile_attention(maps, args.scale)
    if args.dry_run:
        print(json.dumps({"blocks": len(maps), "heads": int(maps[0].shape[0]),
                          "grid": list(maps[0].shape[1:])}, sort_keys=True))
        return EXIT_OK
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(out, canvas)
    save_archive(out.with_suffix(".auvt"), {f"block{i}": a for i, a in enumerate(raw)},
                 {"grids": [list(m.shape[1:]) for m in maps]})
    print(json.dumps({"pgm": str(out), "blocks": len(maps), "heads": int(maps[0].shape[0])}, sort_keys=True))
    return EXIT_OK


def cmd_synth(args) -> int:
    classes = tuple(args.classes.split(",")) if args.classes else ("happiness", "sadness")
    unknown = [c for c in classes if c not in EXPRESSIONS]
    if unknown:
        raise ConfigError(f"unknown synthetic expressions {unknown}", "--classes")
    seed = args.seed if args.seed is not None else 0
    if args.kind == "target":
        manifest = make_target(args.n, classes, args.size, seed, name=args.name or "synth_target",
                               with_aus=args.with_aus)
    else:
        manifest = make_auxiliary(args.n, args.size, seed, name=args.name or "synth_aux")
    if args.dry_run:
        print(json.dumps({"records": len(manifest), "kind": args.kind}, sort_keys=True))
        return EXIT_OK
    path = write_dataset(args.out, manifest)
    print(json.dumps({"manifest": str(path), "records": len(manifest)}, sort_keys=True))
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _global_flags(parser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="override the run seed")
    parser.add_argument("--dry-run", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="resolve and report without writing anything")
    parser.add_argument("--config", default=default, help="run config (JSON)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="auvit", description="AU-aware vision transformer toolkit")
    parser.add_argument("--version", action="version", version=f"auvit {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = sub.add_parser("train", parents=[common], help="train a model from a run config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="also write the JSON result here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bias", parents=[common], help="dataset-bias report over manifests")
    p.add_argument("manifests", nargs="*")
    p.add_argument("--out", default="bias_report")
    p.add_argument("--crop-ratio", type=float, default=1.0)
    p.add_argument("--no-images", action="store_true", help="skip mean images")
    p.set_defaults(func=cmd_bias)

    p = sub.add_parser("scheme", parents=[common], help="write a region scheme and its ASCII map")
    p.add_argument("n", type=int)
    p.add_argument("--out")
    p.add_argument("--grid", type=int, nargs=2, default=(7, 7), metavar=("ROWS", "COLS"))
    p.set_defaults(func=cmd_scheme)

    p = sub.add_parser("attention", parents=[common], help="export attention maps as a PGM grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, default=8)
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic face dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("target", "auxiliary"), default="target")
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--classes")
    p.add_argument("--name")
    p.add_argument("--with-aus", action="store_true")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, ParseError, InvariantViolation) as exc:
        print(f"auvit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AuvitError as exc:
        print(f"auvit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        print(f"auvit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
