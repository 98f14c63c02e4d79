"""Command-line entry points: synth, train, eval, ablate, baseline.

Every command resolves one RunConfig (config file + dotted overrides +
convenience flags), writes its artifacts under --out together with a
config.snapshot.json, and exits 0 on success or 1 with a single
``error <Type>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .checkpoint import file_sha256, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, write_snapshot
from .errors import ConfigurationError, GroupDetError
from .io import load_clip_dataset, save_clip_dataset
from .pipeline import (
    ABLATION_FRACTIONS,
    ABLATION_VARIANTS,
    evaluate_baseline,
    evaluate_model,
    format_ablation_report,
    format_report,
    model_from_checkpoint,
    run_ablation,
    stage1_checkpoint,
    stage2_checkpoint,
    synthesize_dataset,
    training_log_text,
    validation_half_f1,
)
from .prediction import train_stage2
from .simulator import train_stage1
from .utils import derive_seed


def _resolve_config(args) -> RunConfig:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f'out_dir="{args.out}"')
    if getattr(args, "label_fraction", None) is not None:
        overrides.append(f"stage2.label_fraction={args.label_fraction}")
    if getattr(args, "freeze_phi", False):
        overrides.append("stage2.fine_tune_phi=false")
    if getattr(args, "data", None) is not None:
        overrides.append(f'data.train="{args.data}"')
    if getattr(args, "test_data", None) is not None:
        overrides.append(f'data.test="{args.test_data}"')
    if getattr(args, "val_data", None) is not None:
        overrides.append(f'data.val="{args.val_data}"')
    return load_config(args.config, overrides)


def _prepare_out(cfg: RunConfig) -> str:
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ConfigurationError(f"output directory is not writable: {out}")
    write_snapshot(cfg, out)
    return out


def _load_split(cfg: RunConfig, which: str, required: bool = True):
    path = getattr(cfg.data, which)
    if path is None:
        if required:
            raise ConfigurationError(f"config has no data.{which} path")
        return None
    return load_clip_dataset(path, cfg.data.schema, cfg.data.group_mode)


def cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(cfg)
    splits = synthesize_dataset(cfg.synth, cfg.seed)
    for name, clips in splits.items():
        if clips:
            save_clip_dataset(clips, os.path.join(out, f"{name}.clips.txt"))
    print(f"synth: wrote {sum(len(c) for c in splits.values())} clips to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(cfg)
    train_clips = _load_split(cfg, "train")
    if args.stage == 1:
        result = train_stage1(train_clips, cfg.embedding, cfg.stage1_effective())
        ckpt = stage1_checkpoint(result, cfg.seed)
        path = os.path.join(out, "stage1.ckpt")
        digest = save_checkpoint(path, ckpt)
        with open(os.path.join(out, "stage1.log"), "w") as fh:
            fh.write(f"# stage1 checkpoint sha256 {digest}\n")
            fh.write(training_log_text(result.trace))
        print(f"train 1: checkpoint {path} sha256 {digest}")
        return 0
    stage1_params = None
    stage1_hash = None
    if not args.no_pretrain:
        if args.stage1_checkpoint is None:
            raise ConfigurationError("stage 2 needs --stage1-checkpoint (or pass --no-pretrain)")
        s1 = load_checkpoint(args.stage1_checkpoint, expect_kind="stage1")
        stage1_params = s1.params
        stage1_hash = file_sha256(args.stage1_checkpoint)
    val_clips = _load_split(cfg, "val", required=False)
    validation_fn = None
    if val_clips:
        validation_fn = lambda model, clips: validation_half_f1(model, clips, cfg.propagation, cfg.normalized_features)
    result = train_stage2(
        train_clips,
        stage1_params,
        cfg.embedding,
        cfg.attention,
        cfg.stage2_effective(),
        normalized=cfg.normalized_features,
        validation=val_clips,
        validation_fn=validation_fn,
    )
    ckpt = stage2_checkpoint(result, cfg.seed, stage1_hash, cfg.normalized_features)
    ckpt.meta["phi_init"] = "random" if args.no_pretrain else "stage1"
    path = os.path.join(out, "stage2.ckpt")
    digest = save_checkpoint(path, ckpt)
    with open(os.path.join(out, "stage2.log"), "w") as fh:
        fh.write(f"# stage2 checkpoint sha256 {digest}\n")
        fh.write(f"# phi init {'random' if args.no_pretrain else f'stage1 {stage1_hash}'}\n")
        fh.write(training_log_text(result.trace))
    print(f"train 2: checkpoint {path} sha256 {digest}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(cfg)
    clips = _load_split(cfg, "test")
    ckpt = load_checkpoint(args.checkpoint, expect_kind="stage2")
    model, normalized = model_from_checkpoint(ckpt)
    report = evaluate_model(model, clips, cfg.propagation, normalized)
    header = {
        "checkpoint_sha256": file_sha256(args.checkpoint),
        "relation_threshold": cfg.propagation.threshold,
        "matching": "greedy strict",
        "seed": cfg.seed,
    }
    text = format_report(report, header)
    with open(os.path.join(out, "eval.report.txt"), "w") as fh:
        fh.write(text)
    agg = report.aggregate("model")["micro"]
    print(f"eval: half_f1 {agg['f1']:.4f} iou_auc {agg['iou_auc']:.4f} iou_gm {agg['iou_gm']:.4f} -> {out}")
    return 0


def cmd_baseline(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(cfg)
    clips = _load_split(cfg, "test")
    report = evaluate_baseline(clips, cfg.propagation)
    header = {"relation_threshold": cfg.propagation.threshold, "distance_cutoff": cfg.propagation.distance_cutoff, "seed": cfg.seed}
    with open(os.path.join(out, "baseline.report.txt"), "w") as fh:
        fh.write(format_report(report, header))
    agg = report.aggregate("baseline")["micro"]
    print(f"baseline: half_f1 {agg['f1']:.4f} -> {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(cfg)
    train_clips = _load_split(cfg, "train")
    test_clips = _load_split(cfg, "test")
    seeds = [derive_seed(cfg.seed, 7000, k) for k in range(args.seeds)] if args.seeds > 1 else [cfg.seed]
    fractions = tuple(args.fractions) if args.fractions else ABLATION_FRACTIONS
    variants = tuple(args.variants) if args.variants else ABLATION_VARIANTS
    cells = run_ablation(train_clips, test_clips, cfg, variants, fractions, seeds)
    text = format_ablation_report(cells)
    with open(os.path.join(out, "ablation.report.txt"), "w") as fh:
        fh.write(text)
    print(f"ablate: {len(cells)} cells -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groupdet", description="Social group detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")

    p = sub.add_parser("synth", help="generate synthetic datasets in the native schema")
    common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="run stage 1 (pretext) or stage 2 (group prediction) training")
    p.add_argument("stage", type=int, choices=(1, 2))
    common(p)
    p.add_argument("--data", default=None, help="training clips path (native schema)")
    p.add_argument("--val-data", dest="val_data", default=None, help="validation clips path for per-epoch F1")
    p.add_argument("--stage1-checkpoint", default=None, help="pretraining checkpoint for stage 2")
    p.add_argument("--no-pretrain", action="store_true", help="stage 2 from random embedding init")
    p.add_argument("--freeze-phi", action="store_true", help="stage 2 without embedding fine-tuning")
    p.add_argument("--label-fraction", type=float, default=None, help="fraction of labeled training clips")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a stage-2 checkpoint on labeled clips")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-data", dest="test_data", default=None, help="evaluation clips path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("baseline", help="evaluate the distance-matrix baseline")
    common(p)
    p.add_argument("--test-data", dest="test_data", default=None)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("ablate", help="variant x label-fraction grid")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--test-data", dest="test_data", default=None)
    p.add_argument("--seeds", type=int, default=1, help="number of seeds in the seed family")
    p.add_argument("--fractions", type=float, nargs="*", default=None)
    p.add_argument("--variants", nargs="*", default=None, choices=list(ABLATION_VARIANTS))
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except GroupDetError as e:
        print(f"error {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
