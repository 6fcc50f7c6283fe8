"""Command-line surface: prepare, train, evaluate, ablate, predict.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 checkpoint error. Every command archives its resolved config beside
its outputs and is deterministic given (config, seed, checkpoint).
"""

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import dataio, engine
from .backbone import BACKBONES
from .config import (
    apply_overrides,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DMSNetError,
    RegistryError,
)
from .metrics import evaluate_predictions
from .model import ABLATION_ROWS, CLASS_NAMES, apply_ablation
from .plots import save_confusion_heatmap, save_roc_curves

TABLE_COLUMNS = ("Configuration", "Acc", "Precision", "Recall", "Kappa", "F1", "AUC")


def build_parser():
    parser = argparse.ArgumentParser(prog="dmsnet",
                                     description="paired fundus image classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="run config JSON")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, help="override the output directory")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dot-path config override")

    p = sub.add_parser("prepare", help="build the processed + augmented dataset")
    common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    common(p)
    p.add_argument("--checkpoint", type=Path, help="resume from this checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on one split")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", default="test", choices=dataio.PARTITIONS)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train/evaluate a set of configurations")
    common(p)
    p.add_argument("--rows", required=True,
                   help="comma-separated ablation rows and/or backbone names")
    p.add_argument("--split", default="test", choices=dataio.PARTITIONS)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("predict", help="score one left/right image pair")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("left", type=Path)
    p.add_argument("right", type=Path)
    p.set_defaults(func=cmd_predict)

    return parser


def resolve_config(args):
    data = config_to_dict(load_config(args.config)) if args.config else \
        config_to_dict(config_from_dict({}))
    apply_overrides(data, args.overrides)
    cfg = config_from_dict(data)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "out", None) is not None:
        cfg = dataclasses.replace(cfg, output_dir=str(args.out))
    return cfg


def cmd_prepare(args):
    cfg = resolve_config(args)
    out_dir = Path(cfg.data_dir)
    csv_path = Path(cfg.data_csv)
    if not csv_path.exists():
        raise DataError(f"index file not found: {csv_path}")
    manifest = dataio.prepare_dataset(
        csv_path,
        out_dir,
        image_dir=cfg.image_dir,
        resolution=cfg.model.input_resolution,
        ratios=cfg.split_ratios,
        seed=cfg.seed,
        multiplier=cfg.augment.multiplier,
        per_class=cfg.augment.per_class,
        augment_partitions=cfg.augment.partitions,
    )
    save_config(cfg, out_dir / "config.json")
    counts = {}
    for record in manifest["samples"]:
        key = (record["split"], record["provenance"])
        counts[key] = counts.get(key, 0) + 1
    print(f"prepared {len(manifest['samples'])} samples under {out_dir}")
    for (split, provenance), count in sorted(counts.items()):
        print(f"  {split:5s} {provenance:9s} {count}")
    return 0


def cmd_train(args):
    cfg = resolve_config(args)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.json")
    summary = engine.train_run(cfg, resume_from=args.checkpoint)
    print(json.dumps(summary, indent=2))
    return 0


def _evaluate_to_dir(model, data_dir, split, out_dir, batch_size, device):
    dataset = engine.ManifestDataset(data_dir, split)
    scores, truths = engine.collect_scores(model, dataset, batch_size, device)
    report = evaluate_predictions(scores, truths, model.config.task_mode,
                                  require_auc=False)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / f"metrics_{split}.json"
    metrics_path.write_text(report.to_json() + "\n")
    save_confusion_heatmap(report.confusion, out_dir / f"confusion_{split}.png")
    save_roc_curves(scores, truths, out_dir, prefix=f"roc_{split}")
    return report, metrics_path


def cmd_evaluate(args):
    cfg = resolve_config(args)
    payload = engine.load_checkpoint(args.checkpoint)
    model, saved_cfg = engine.restore_model(payload)
    model.to(torch.device(cfg.device))
    data_dir = cfg.data_dir if Path(cfg.data_dir, "manifest.json").exists() \
        else saved_cfg.data_dir
    out_dir = Path(cfg.output_dir)
    report, metrics_path = _evaluate_to_dir(
        model, data_dir, args.split, out_dir, cfg.train.batch_size, cfg.device)
    save_config(cfg, out_dir / "config.json")
    print(f"wrote {metrics_path}")
    print(json.dumps({k: v for k, v in report.to_dict().items()
                      if k not in ("confusion", "per_class")}, sort_keys=True, indent=2))
    return 0


def _row_config(cfg, row):
    if row in ABLATION_ROWS:
        return dataclasses.replace(cfg, model=apply_ablation(cfg.model, row))
    if row in BACKBONES:
        return dataclasses.replace(
            cfg, model=dataclasses.replace(cfg.model, backbone_name=row))
    known = ", ".join(list(ABLATION_ROWS) + sorted(BACKBONES))
    raise RegistryError(f"unknown ablation/backbone row '{row}' (available: {known})")


def cmd_ablate(args):
    cfg = resolve_config(args)
    rows = [r.strip() for r in args.rows.split(",") if r.strip()]
    if not rows:
        raise ConfigError("--rows is empty")
    row_configs = {row: _row_config(cfg, row) for row in rows}  # validate all first

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.json")

    table = []
    for row, row_cfg in row_configs.items():
        row_dir = out_dir / row
        row_cfg = dataclasses.replace(row_cfg, output_dir=str(row_dir))
        engine.train_run(row_cfg)
        model, _ = engine.restore_model(
            engine.load_checkpoint(row_dir / engine.BEST_CHECKPOINT))
        model.to(torch.device(cfg.device))
        report, _ = _evaluate_to_dir(model, cfg.data_dir, args.split, row_dir,
                                     cfg.train.batch_size, cfg.device)
        table.append((row, report))
        print(f"{row}: acc={report.accuracy:.3f} kappa={report.kappa:.3f}")

    table_path = out_dir / "comparison.csv"
    with open(table_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(TABLE_COLUMNS)
        for row, report in table:
            writer.writerow([
                row,
                f"{report.accuracy:.4f}",
                f"{report.precision_macro:.4f}",
                f"{report.recall_macro:.4f}",
                f"{report.kappa:.4f}",
                f"{report.f1_macro:.4f}",
                "" if report.auc_macro is None else f"{report.auc_macro:.4f}",
            ])
    print(f"wrote {table_path}")
    return 0


def cmd_predict(args):
    cfg = resolve_config(args)
    for path in (args.left, args.right):
        if not Path(path).exists():
            raise DataError(f"image not found: {path}")
    payload = engine.load_checkpoint(args.checkpoint)
    model, saved_cfg = engine.restore_model(payload)
    model.to(torch.device(cfg.device)).eval()

    resolution = saved_cfg.model.input_resolution
    tensors = []
    for path in (args.left, args.right):
        arr = dataio.illumination_correct(
            dataio.resize_center_crop(dataio._load_rgb(path), resolution))
        tensors.append(torch.from_numpy(arr.astype(np.float32) / 255.0)
                       .permute(2, 0, 1).unsqueeze(0))
    with torch.no_grad():
        logits = model(tensors[0], tensors[1])
        probs = (torch.softmax(logits, dim=1) if saved_cfg.model.task_mode == "multiclass"
                 else torch.sigmoid(logits))[0]
    result = {
        "scores": {name: float(p) for name, p in zip(CLASS_NAMES, probs)},
        "predicted": CLASS_NAMES[int(probs.argmax())],
    }
    print(json.dumps(result, indent=2, sort_keys=True))
    if getattr(args, "out", None):
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "prediction.json").write_text(
            json.dumps(result, indent=2, sort_keys=True) + "\n")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DMSNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
