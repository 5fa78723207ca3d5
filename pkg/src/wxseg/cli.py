"""Operator command line.

Subcommands: gen-data, train-stage0, train-stage1, train-stage2, eval,
pseudo-label, mix. Every command writes a run manifest (resolved config,
seed, input and output paths, wall-clock timings) next to its outputs so
a run is reproducible from the manifest alone.

Exit codes: 0 success, 2 usage, 3 data or format error, 4 missing
prerequisite artifact.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .augment import polar_mix
from .errors import DataError, FormatError, PrerequisiteError, WxsegError
from .model import load_checkpoint, save_checkpoint
from .pcio import LabeledScan, read_labels, read_scan, write_labels, write_scan
from .pipeline import (
    TrainConfig,
    evaluate,
    format_record,
    fss_only_config,
    generate_pseudo_labels,
    train_stage0,
    train_stage1,
    train_stage2,
)
from .synth import (
    ClassSchema,
    default_adverse_params,
    default_good_params,
    gen_split,
    load_split,
    write_split,
)
from .util import fmt_float

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_PREREQ = 4


def _load_config(args) -> TrainConfig:
    """Config file first, then flag overrides; the merged result is what
    the manifest records."""
    if getattr(args, "config", None):
        raw = yaml.safe_load(Path(args.config).read_text()) or {}
        cfg = TrainConfig.from_dict(raw)
    else:
        cfg = TrainConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        if args.stage == 0:
            cfg.epochs_stage0 = args.epochs
        elif args.stage == 1:
            cfg.epochs_stage1 = args.epochs
        else:
            cfg.epochs_stage2 = args.epochs
    return cfg


def _write_manifest(out_dir: Path, command: str, cfg: TrainConfig | None,
                    inputs: dict, outputs: dict, timings: dict, extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "timings_s": {k: round(float(v), 3) for k, v in timings.items()},
    }
    if cfg is not None:
        manifest["config"] = cfg.to_dict()
        manifest["config_hash"] = cfg.config_hash
        manifest["seed"] = int(cfg.seed)
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.yaml"
    path.write_text(yaml.safe_dump(manifest, sort_keys=True))
    return path


def _require(path, what: str, hint: str):
    if path is None or not Path(path).exists():
        raise PrerequisiteError(
            f"missing {what}" + (f" at {path}" if path else "") + f"; {hint}"
        )
    return Path(path)


def cmd_gen_data(args) -> int:
    t0 = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    good = default_good_params(seed=args.seed, points=args.points)
    adverse = default_adverse_params(seed=args.seed, points=args.points)
    split = gen_split(good, adverse, args.n_source, args.n_unlabeled, args.k, args.seed)
    write_split(split, out)
    manifest = _write_manifest(
        out,
        "gen-data",
        None,
        inputs={},
        outputs={"dataset": out},
        timings={"total": time.perf_counter() - t0},
        extra={
            "seed": int(args.seed),
            "k": int(args.k),
            "n_source": int(args.n_source),
            "n_unlabeled": int(args.n_unlabeled),
            "points_per_scan": int(args.points),
            "scene_params_good": good.to_dict(),
            "scene_params_adverse": adverse.to_dict(),
        },
    )
    print(manifest)
    return EXIT_OK


def _write_records(records, path: Path):
    path.write_text("".join(format_record(r) + "\n" for r in records))


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split = load_split(args.data)
    schema = split.schema
    timings = {}
    extra = {}

    if args.stage == 0:
        model = train_stage0(split.source, cfg, schema)
        timings["train"] = time.perf_counter() - t0
        ckpt = out / "stage0.ckpt"
        save_checkpoint(model, ckpt, cfg.epochs_stage0, schema, cfg.config_hash)
        outputs = {"checkpoint": ckpt}
        records = None
    else:
        ckpt0 = _require(args.stage0, "stage 0 checkpoint", "run train-stage0 first")
        phi0 = load_checkpoint(ckpt0, cfg.config_hash).model
        if args.stage == 1:
            if getattr(args, "ablate_fss_only", False):
                cfg = fss_only_config(cfg)
                extra["ablate_fss_only"] = True
            state, records = train_stage1(
                phi0, split.target_labeled, split.target_unlabeled, cfg, schema
            )
            ckpt = out / "stage1_best.ckpt"
        else:
            ckpt1 = _require(args.stage1, "stage 1 checkpoint", "run train-stage1 first")
            phi1 = load_checkpoint(ckpt1, cfg.config_hash).model
            state, records = train_stage2(
                phi0,
                phi1,
                split.target_labeled,
                split.target_unlabeled,
                split.source,
                cfg,
                schema,
            )
            ckpt = out / "stage2_best.ckpt"
        timings["train"] = time.perf_counter() - t0
        save_checkpoint(state.model, ckpt, state.epoch, schema, cfg.config_hash)
        metrics_path = out / "metrics.txt"
        _write_records(records, metrics_path)
        from .report import render_miou_trace

        fig = render_miou_trace(records, out / "miou_trace.png")
        outputs = {"checkpoint": ckpt, "metrics": metrics_path, "miou_trace": fig}
        print(f"best mIoU {fmt_float(state.miou)} at epoch {state.epoch}")

    inputs = {"data": args.data}
    if args.stage >= 1:
        inputs["stage0"] = args.stage0
    if args.stage == 2:
        inputs["stage1"] = args.stage1
    manifest = _write_manifest(
        out, f"train-stage{args.stage}", cfg, inputs, outputs, timings, extra
    )
    print(manifest)
    return EXIT_OK


def _load_labeled_dir(data_dir: Path, schema: ClassSchema):
    vdir = data_dir / "velodyne"
    if not vdir.is_dir():
        raise DataError(f"{data_dir}: expected a velodyne/ subdirectory")
    scans = []
    for f in sorted(vdir.glob("*.bin")):
        cloud = read_scan(f)
        labels = read_labels(data_dir / "labels" / (f.stem + ".label"), schema)
        scans.append(LabeledScan(cloud=cloud, labels=labels))
    if not scans:
        raise DataError(f"{data_dir}: no scans found")
    return scans


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    ckpt = _require(args.checkpoint, "checkpoint", "train a model first")
    loaded = load_checkpoint(ckpt)
    schema = loaded.schema
    scans = _load_labeled_dir(Path(args.data), schema)
    res = evaluate(loaded.model, scans, schema)

    names = schema.class_names
    print(f"# evaluation of {ckpt} on {args.data} ({len(scans)} scans)")
    print(f"# {'class':<16} {'IoU':>8}")
    for name, v in zip(names, res["iou"]):
        print(f"# {name:<16} {'n/a' if np.isnan(v) else f'{v:8.4f}'}")
    for name, cid, v in zip(names, range(len(names)), res["iou"]):
        print(f"class={name} id={cid} iou={'nan' if np.isnan(v) else fmt_float(v)}")
    parts = []
    for key in ("miou_all", "miou_base", "miou_novel"):
        v = res[key]
        parts.append(f"{key}={'nan' if v is None else fmt_float(v)}")
    print(" ".join(parts))

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lines = []
        for name, cid, v in zip(names, range(len(names)), res["iou"]):
            lines.append(f"class={name} id={cid} iou={'nan' if np.isnan(v) else fmt_float(v)}")
        lines.append(" ".join(parts))
        metrics_path = out / "eval_metrics.txt"
        metrics_path.write_text("".join(line + "\n" for line in lines))
        from .report import render_per_class_iou

        fig = render_per_class_iou(names, res["iou"], out / "per_class_iou.png")
        _write_manifest(
            out,
            "eval",
            None,
            inputs={"checkpoint": ckpt, "data": args.data},
            outputs={"metrics": metrics_path, "per_class_iou": fig},
            timings={"total": time.perf_counter() - t0},
        )
    return EXIT_OK


def cmd_pseudo_label(args) -> int:
    ckpt = _require(args.checkpoint, "checkpoint", "train a model first")
    loaded = load_checkpoint(ckpt)
    cloud = read_scan(args.scan)
    labels = generate_pseudo_labels(loaded.model, cloud)
    write_labels(labels, args.out)
    print(f"wrote {labels.size} labels to {args.out}")
    return EXIT_OK


def cmd_mix(args) -> int:
    schema = None
    if args.schema:
        schema = ClassSchema.from_dict(yaml.safe_load(Path(args.schema).read_text()))
    a = LabeledScan(cloud=read_scan(args.scan_a), labels=read_labels(args.labels_a, schema))
    b = LabeledScan(cloud=read_scan(args.scan_b), labels=read_labels(args.labels_b, schema))
    mixed = polar_mix(a, b, args.theta, args.start)
    write_scan(mixed.cloud, args.out_scan)
    write_labels(mixed.labels, args.out_labels)
    print(f"wrote {mixed.count} points to {args.out_scan}")
    return EXIT_OK


def _theta_arg(value: str) -> float:
    theta = float(value)
    if not 0.0 < theta < 2.0 * np.pi:
        raise argparse.ArgumentTypeError(
            f"theta must lie in the open interval (0, 2*pi), got {theta}"
        )
    return theta


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wxseg",
        description="Label-efficient LiDAR segmentation in adverse weather",
    )
    parser.add_argument("--version", action="version", version=f"wxseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config mirroring TrainConfig fields")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument("--threads", type=int, default=1,
                        help="reserved; execution is single-threaded")

    g = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--k", type=int, default=5, help="labeled adverse shots")
    g.add_argument("--n-source", type=int, default=200)
    g.add_argument("--n-unlabeled", type=int, default=200)
    g.add_argument("--points", type=int, default=512, help="points per scan")
    g.set_defaults(func=cmd_gen_data, seed=0)

    for stage in (0, 1, 2):
        t = sub.add_parser(
            f"train-stage{stage}", parents=[common], help=f"run training stage {stage}"
        )
        t.add_argument("--data", required=True, help="dataset directory from gen-data")
        t.add_argument("--out", required=True, help="run output directory")
        t.add_argument("--epochs", type=int, default=None, help="override stage epochs")
        if stage >= 1:
            t.add_argument("--stage0", required=True, help="stage-0 checkpoint path")
        if stage == 2:
            t.add_argument("--stage1", required=True, help="stage-1 best checkpoint path")
        if stage == 1:
            t.add_argument(
                "--ablate-fss-only",
                action="store_true",
                help="disable the self-training term by making the warmup gate unreachable",
            )
        t.set_defaults(func=cmd_train, stage=stage)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="directory with velodyne/ and labels/")
    e.add_argument("--out", default=None, help="write metrics file and figures here")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("pseudo-label", parents=[common], help="label one scan with a model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scan", required=True, help="input .bin scan")
    p.add_argument("--out", required=True, help="output .label file")
    p.set_defaults(func=cmd_pseudo_label)

    m = sub.add_parser("mix", parents=[common], help="polar-mix two labeled scans")
    m.add_argument("--scan-a", required=True)
    m.add_argument("--labels-a", required=True)
    m.add_argument("--scan-b", required=True)
    m.add_argument("--labels-b", required=True)
    m.add_argument("--theta", type=_theta_arg, required=True,
                   help="sector width taken from scan A, in (0, 2*pi)")
    m.add_argument("--start", type=float, default=0.0, help="sector start angle")
    m.add_argument("--schema", default=None, help="schema.yaml for label remapping")
    m.add_argument("--out-scan", required=True)
    m.add_argument("--out-labels", required=True)
    m.set_defaults(func=cmd_mix)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PrerequisiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    except (FormatError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except WxsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())
