"""Command-line entry points; commands compose via files.

Every command writes the resolved configuration next to its outputs, so a
run can be reproduced from its artifacts alone. Failures exit non-zero with
a single machine-parsable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .frames import RawStackDecoder, VideoFileDecoder
from .manifest import Manifest, load_manifest
from .metrics import LEVELS, compute_report, evaluate, load_predictions_csv, save_predictions_csv
from .models import load_checkpoint, save_checkpoint
from .phantom import PhantomSpec, generate_dataset
from .reporting import plot_predictions, render_metrics_table
from .runconfig import (
    RunConfig,
    load_phantom_spec,
    load_run_config,
    save_phantom_spec,
    save_run_config,
)
from .splitting import SplitScheme, load_split_plan, make_split, partitions, save_split_plan
from .training import train, write_log_jsonl


def decoder_for_manifest(manifest: Manifest):
    if all(v.source_path.endswith(".lusraw") for v in manifest.videos.values()):
        return RawStackDecoder()
    return VideoFileDecoder()


def _infer_task(pset) -> str:
    return "classification" if all(e.target_class is not None for e in pset.entries) else "regression"


def _cmd_phantom_gen(args: argparse.Namespace) -> int:
    spec = load_phantom_spec(args.spec) if args.spec else PhantomSpec()
    out_dir = Path(args.out)
    dataset = generate_dataset(spec, out_dir)
    save_phantom_spec(spec, out_dir / "phantom_spec.resolved.ini")
    print(f"wrote {dataset.manifest_path} ({len(dataset.manifest.videos)} videos, "
          f"{len(dataset.manifest.patients)} patients)")
    return 0


def _cmd_split(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    scheme = SplitScheme.parse(args.scheme)
    plan = make_split(manifest, args.seed, scheme)
    out = Path(args.out) if args.out else Path(args.manifest).with_name("split.json")
    save_split_plan(plan, out)
    resolved = out.with_name(out.stem + "_config.resolved.ini")
    resolved.write_text(
        f"[paths]\nmanifest = {args.manifest}\nout = {out}\n\n"
        f"[split]\nscheme = {plan.scheme}\nseed = {plan.seed}\n",
        encoding="utf-8",
    )
    print(f"wrote {out} ({len(plan.assignments)} patients)")
    return 0


def _resolve_plan(cfg: RunConfig, manifest: Manifest):
    if cfg.split_path is not None:
        plan = load_split_plan(cfg.split_path)
    else:
        plan = make_split(manifest, cfg.split_seed, SplitScheme.parse(cfg.split_scheme))
    scheme = SplitScheme.parse(plan.scheme)
    fold = cfg.split_fold if scheme.kind == "kfold" else None
    return plan, partitions(plan, test_fold=fold)


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    manifest = load_manifest(cfg.manifest_path)
    plan, parts = _resolve_plan(cfg, manifest)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.split_path is None:
        save_split_plan(plan, out_dir / "split.json")
        cfg = dataclasses.replace(cfg, split_path=out_dir / "split.json")
    decoder = decoder_for_manifest(manifest)
    result = train(
        manifest,
        parts,
        cfg.training,
        cfg.backbone,
        cfg.head,
        cfg.augmentation,
        decoder,
        video_root=cfg.resolved_video_root(),
    )
    save_checkpoint(result.model, out_dir / "checkpoint.pt")
    write_log_jsonl(result.log, out_dir / "training_log.jsonl")
    save_run_config(cfg, out_dir / "run_config.resolved.ini")
    best = result.best_epoch if result.best_epoch is not None else "n/a"
    print(f"wrote {out_dir / 'checkpoint.pt'} (best epoch: {best})")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    plan = load_split_plan(args.split)
    scheme = SplitScheme.parse(plan.scheme)
    fold = args.fold if scheme.kind == "kfold" else None
    parts = partitions(plan, test_fold=fold)
    levels = tuple(s.strip() for s in args.levels.split(",") if s.strip())
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    video_root = Path(args.video_root) if args.video_root else Path(args.manifest).parent
    report, pset = evaluate(
        model,
        manifest,
        parts["test"],
        decoder_for_manifest(manifest),
        levels=levels,
        sf_clip=args.sf_clip,
        sf_norm=args.sf_norm,
        video_root=video_root,
    )
    (out_dir / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    save_predictions_csv(pset, out_dir / "predictions.csv")
    resolved = out_dir / "evaluate_config.resolved.ini"
    resolved.write_text(
        "[paths]\n"
        f"checkpoint = {args.checkpoint}\nmanifest = {args.manifest}\n"
        f"split = {args.split}\nout_dir = {out_dir}\nvideo_root = {video_root}\n\n"
        "[evaluation]\n"
        f"levels = {','.join(levels)}\nsf_clip = {args.sf_clip}\nsf_norm = {args.sf_norm}\n"
        f"fold = {args.fold}\n",
        encoding="utf-8",
    )
    print(f"wrote {out_dir / 'metrics.json'} and {out_dir / 'predictions.csv'}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    pset = load_predictions_csv(args.predictions)
    task = args.task if args.task != "auto" else _infer_task(pset)
    levels = tuple(s.strip() for s in args.levels.split(",") if s.strip())
    report = compute_report(pset, task, levels=levels, sf_clip=args.sf_clip, sf_norm=args.sf_norm)
    if args.format == "json":
        print(report.to_json())
    else:
        print(render_metrics_table(report), end="")
    return 0


def _cmd_plot(args: argparse.Namespace) -> int:
    pset = load_predictions_csv(args.predictions)
    task = args.task if args.task != "auto" else _infer_task(pset)
    manifest = load_manifest(args.manifest) if args.manifest else None
    out = plot_predictions(
        pset,
        args.out,
        manifest=manifest,
        task=task,
        sf_clip=args.sf_clip,
        sf_norm=args.sf_norm,
    )
    resolved = Path(args.out).with_suffix(Path(args.out).suffix + ".config.ini")
    resolved.write_text(
        f"[plot]\npredictions = {args.predictions}\nout = {args.out}\ntask = {task}\n"
        f"sf_clip = {args.sf_clip}\nsf_norm = {args.sf_norm}\n",
        encoding="utf-8",
    )
    print(f"wrote {out}")
    return 0


def _add_sf_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sf-clip", type=float, default=450.0, dest="sf_clip")
    parser.add_argument("--sf-norm", type=float, default=450.0, dest="sf_norm")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neolus",
        description="Lung-ultrasound video scoring pipeline (phantom benchmark included).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom-gen", help="generate the synthetic phantom dataset")
    p.add_argument("--spec", help="phantom spec config file ([phantom] section)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_phantom_gen)

    p = sub.add_parser("split", help="make a leakage-safe patient-level split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scheme", default="kfold:5", help="kfold:K or holdout:F1/F2[/F3]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output JSON path (default: alongside the manifest)")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train a model from a run config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test partition")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--fold", type=int, default=0, help="test fold for kfold plans")
    p.add_argument("--levels", default=",".join(LEVELS))
    p.add_argument("--out", help="output directory (default: checkpoint directory)")
    p.add_argument("--video-root", dest="video_root")
    _add_sf_flags(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="metrics report from a predictions CSV")
    p.add_argument("--predictions", required=True)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--task", choices=("auto", "regression", "classification"), default="auto")
    p.add_argument("--levels", default=",".join(LEVELS))
    _add_sf_flags(p)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("plot", help="session-level scatter plot from a predictions CSV")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--manifest", help="manifest for disease markers")
    p.add_argument("--task", choices=("auto", "regression", "classification"), default="auto")
    _add_sf_flags(p)
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # contract: one JSON line on stderr, non-zero exit
        print(
            json.dumps({"error": str(exc), "command": args.command}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
