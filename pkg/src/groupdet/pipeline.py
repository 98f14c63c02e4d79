"""End-to-end orchestration: datasets, training runs, inference, reports, ablations.

Everything here is a pure function of (clips, config): dataset synthesis is
seeded per clip, inference runs embed -> stacked attention -> pair scoring ->
label propagation per frame, and reports are canonical text so reruns from a
config snapshot are byte-identical.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from statistics import median
from typing import Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint, load_module_state, module_state_numpy
from .config import RunConfig, SynthDatasetConfig
from .embedding import EmbeddingConfig
from .errors import ConfigurationError, StateError
from .metrics import DEFAULT_CURVE_THRESHOLDS, MatchCounts, greedy_match, iou_qualifies, match_counts
from .prediction import StackAttConfig, Stage2Model, prepare_clip_tensors, train_stage2
from .propagation import PropagationConfig, baseline_partition_from_distances, partitions_from_relation_tensor
from .scene import GroupPartition, SceneClip, pair_mask, relation_matrix_from_partition
from .simulator import Stage1Result, train_stage1
from .synth import SynthParams, generate_synthetic_scene
from .utils import derive_seed


def synthesize_split(cfg: SynthDatasetConfig, n_clips: int, seed: int, split_tag: int) -> list[SceneClip]:
    """n_clips scenes with per-clip parameters drawn from the dataset ranges."""
    clips = []
    for i in range(n_clips):
        clip_seed = derive_seed(seed, split_tag, i)
        rng = np.random.default_rng(clip_seed)
        params = SynthParams(
            n_groups=int(rng.integers(cfg.n_groups_range[0], cfg.n_groups_range[1] + 1)),
            group_size_range=cfg.group_size_range,
            n_loners=int(rng.integers(cfg.n_loners_range[0], cfg.n_loners_range[1] + 1)),
            motion_model=cfg.motion_models[int(rng.integers(len(cfg.motion_models)))],
            frame_count=cfg.frame_count,
            scene_extent=cfg.scene_extent,
            noise_scale=cfg.noise_scale,
            seed=clip_seed,
        )
        clip = generate_synthetic_scene(params)
        clips.append(dataclasses.replace(clip, clip_id=f"{clip.clip_id}-{split_tag}-{i:03d}"))
    return clips


def synthesize_dataset(cfg: SynthDatasetConfig, seed: int) -> dict[str, list[SceneClip]]:
    cfg.validate()
    return {
        "train": synthesize_split(cfg, cfg.n_train, seed, 1),
        "val": synthesize_split(cfg, cfg.n_val, seed, 2),
        "test": synthesize_split(cfg, cfg.n_test, seed, 3),
    }


def stage1_checkpoint(result: Stage1Result, seed: int) -> Checkpoint:
    params = module_state_numpy(result.phi, "phi.") | module_state_numpy(result.head, "recovery.")
    meta = {
        "seed": seed,
        "embedding_config": dataclasses.asdict(result.embedding_config),
        "stage1_config": dataclasses.asdict(result.config),
        "frame_count": result.head.frame_count,
        "loss_trace": [{"epoch": r["epoch"], "loss": r["loss"], "lr": r["lr"]} for r in result.trace],
    }
    return Checkpoint(kind="stage1", params=params, meta=meta)


def stage2_checkpoint(result, seed: int, stage1_hash: str | None, normalized: bool) -> Checkpoint:
    params = module_state_numpy(result.model, "")
    meta = {
        "seed": seed,
        "embedding_config": dataclasses.asdict(result.embedding_config),
        "attention_config": dataclasses.asdict(result.attention_config),
        "stage2_config": dataclasses.asdict(result.config),
        "normalized_features": normalized,
        "stage1_checkpoint_sha256": stage1_hash,
        "label_indices": result.label_indices,
        "loss_trace": [
            {k: v for k, v in row.items() if k != "wallclock_s"} for row in result.trace
        ],
    }
    return Checkpoint(kind="stage2", params=params, meta=meta)


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[Stage2Model, bool]:
    """Rebuild the stage-2 model from a checkpoint; returns (model, normalized_features)."""
    if ckpt.kind != "stage2":
        raise StateError(f"group detection needs a stage2 checkpoint, found {ckpt.kind}")
    embedding_cfg = EmbeddingConfig(**ckpt.meta["embedding_config"])
    att_cfg = StackAttConfig(**ckpt.meta["attention_config"])
    model = Stage2Model(embedding_cfg, att_cfg)
    load_module_state(model, ckpt.params)
    model.eval()
    return model, bool(ckpt.meta.get("normalized_features", True))


def predict_clip_relations(model: Stage2Model, clip: SceneClip, normalized: bool = True) -> np.ndarray:
    """(T, N, N) relation scores in [0, 1] for one clip."""
    dtype = next(model.parameters()).dtype
    ct = prepare_clip_tensors(clip, model.phi.cfg, dtype, normalized, need_gt=False)
    with torch.no_grad():
        pred = model(ct.v, ct.adj, ct.dist, ct.presence)
    return pred.numpy()


def detect_groups(model: Stage2Model, clip: SceneClip, prop_cfg: PropagationConfig, normalized: bool = True) -> list[GroupPartition]:
    relations = predict_clip_relations(model, clip, normalized)
    return partitions_from_relation_tensor(relations, np.array(clip.presence), prop_cfg)


@dataclass(frozen=True)
class ClipEvalRow:
    clip_id: str
    source: str  # "model" | "baseline" | caller-defined
    half: MatchCounts
    f1: float
    precision: float
    recall: float
    auc: float
    gm_and: int
    gm_or: int
    curve_correct: tuple[int, ...]  # per curve threshold

    @property
    def iou_gm_value(self) -> float:
        return 1.0 if self.gm_or == 0 else self.gm_and / self.gm_or


def evaluate_partitions_for_clip(
    clip_id: str,
    source: str,
    pred_parts: Sequence[GroupPartition],
    gt_parts: Sequence[GroupPartition],
    presence: np.ndarray,
    rel_pred_bin: np.ndarray | None = None,
    thresholds: Sequence[float] = DEFAULT_CURVE_THRESHOLDS,
) -> ClipEvalRow:
    """Score one clip micro-averaged over frames.

    When ``rel_pred_bin`` is None the binary relation matrices are derived
    from the predicted partitions, so partition-level and pair-level metrics
    stay consistent.
    """
    counts = MatchCounts(0, 0, 0)
    gm_and = gm_or = 0
    curve_correct = np.zeros(len(thresholds), dtype=int)
    curve_pred = curve_gt = 0
    for t, (pp, gp) in enumerate(zip(pred_parts, gt_parts)):
        counts = counts + match_counts(pp.groups, gp.groups)
        mask = pair_mask(presence[t])
        pred_bin = rel_pred_bin[t] if rel_pred_bin is not None else relation_matrix_from_partition(pp, presence.shape[1])
        gt_bin = relation_matrix_from_partition(gp, presence.shape[1])
        gm_and += int(np.logical_and(pred_bin[mask] == 1, gt_bin[mask] == 1).sum())
        gm_or += int(np.logical_or(pred_bin[mask] == 1, gt_bin[mask] == 1).sum())
        matches = greedy_match([frozenset(g) for g in pp.groups], [frozenset(g) for g in gp.groups])
        for k, thr in enumerate(thresholds):
            curve_correct[k] += sum(1 for _, _, iou in matches if iou_qualifies(iou, thr))
        curve_pred += len(pp.groups)
        curve_gt += len(gp.groups)
    f1s = _curve_f1(curve_correct, curve_pred, curve_gt)
    auc = float(np.trapezoid(f1s, thresholds) / (thresholds[-1] - thresholds[0]))
    half = counts.result()
    return ClipEvalRow(
        clip_id=clip_id,
        source=source,
        half=counts,
        f1=half.f1,
        precision=half.precision,
        recall=half.recall,
        auc=auc,
        gm_and=gm_and,
        gm_or=gm_or,
        curve_correct=tuple(int(c) for c in curve_correct),
    )


def _curve_f1(correct: np.ndarray, n_pred: int, n_gt: int) -> np.ndarray:
    p = correct / n_pred if n_pred else np.zeros_like(correct, dtype=float)
    r = correct / n_gt if n_gt else np.zeros_like(correct, dtype=float)
    denom = p + r
    out = np.zeros(len(correct), dtype=float)
    nz = denom > 0
    out[nz] = 2 * p[nz] * r[nz] / denom[nz]
    return out


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[ClipEvalRow, ...]
    thresholds: tuple[float, ...]

    def aggregate(self, source: str) -> dict:
        rows = [r for r in self.rows if r.source == source]
        if not rows:
            raise ConfigurationError(f"no rows for source {source!r}")
        counts = MatchCounts(0, 0, 0)
        gm_and = gm_or = 0
        curve_correct = np.zeros(len(self.thresholds), dtype=int)
        n_pred_total = n_gt_total = 0
        for r in rows:
            counts = counts + r.half
            gm_and += r.gm_and
            gm_or += r.gm_or
            curve_correct += np.array(r.curve_correct)
            n_pred_total += r.half.n_pred
            n_gt_total += r.half.n_gt
        micro = counts.result()
        f1s = _curve_f1(curve_correct, n_pred_total, n_gt_total)
        auc = float(np.trapezoid(f1s, self.thresholds) / (self.thresholds[-1] - self.thresholds[0]))
        return {
            "micro": {
                "precision": micro.precision,
                "recall": micro.recall,
                "f1": micro.f1,
                "iou_auc": auc,
                "iou_gm": 1.0 if gm_or == 0 else gm_and / gm_or,
                "curve_f1": tuple(float(x) for x in f1s),
            },
            "macro": {
                "precision": float(np.mean([r.precision for r in rows])),
                "recall": float(np.mean([r.recall for r in rows])),
                "f1": float(np.mean([r.f1 for r in rows])),
                "iou_auc": float(np.mean([r.auc for r in rows])),
                "iou_gm": float(np.mean([r.iou_gm_value for r in rows])),
            },
        }


def evaluate_model(
    model: Stage2Model,
    clips: Sequence[SceneClip],
    prop_cfg: PropagationConfig,
    normalized: bool = True,
    include_baseline: bool = True,
) -> EvalReport:
    """Full inference + metrics over labeled clips, with the distance baseline beside it."""
    rows: list[ClipEvalRow] = []
    for clip in clips:
        if clip.gt_partition is None:
            raise ConfigurationError(f"clip {clip.clip_id} has no ground truth to evaluate against")
        relations = predict_clip_relations(model, clip, normalized)
        parts = partitions_from_relation_tensor(relations, np.array(clip.presence), prop_cfg)
        rel_bin = (relations > prop_cfg.threshold).astype(np.float64)
        rows.append(
            evaluate_partitions_for_clip(
                clip.clip_id, "model", parts, clip.gt_partition, np.array(clip.presence), rel_bin
            )
        )
        if include_baseline:
            base_parts = baseline_partition_from_distances(clip, prop_cfg)
            rows.append(
                evaluate_partitions_for_clip(
                    clip.clip_id, "baseline", base_parts, clip.gt_partition, np.array(clip.presence)
                )
            )
    return EvalReport(tuple(rows), tuple(DEFAULT_CURVE_THRESHOLDS))


def evaluate_baseline(clips: Sequence[SceneClip], prop_cfg: PropagationConfig) -> EvalReport:
    rows = []
    for clip in clips:
        if clip.gt_partition is None:
            raise ConfigurationError(f"clip {clip.clip_id} has no ground truth to evaluate against")
        parts = baseline_partition_from_distances(clip, prop_cfg)
        rows.append(
            evaluate_partitions_for_clip(clip.clip_id, "baseline", parts, clip.gt_partition, np.array(clip.presence))
        )
    return EvalReport(tuple(rows), tuple(DEFAULT_CURVE_THRESHOLDS))


def validation_half_f1(model: Stage2Model, clips: Sequence[SceneClip], prop_cfg: PropagationConfig, normalized: bool = True) -> float:
    report = evaluate_model(model, clips, prop_cfg, normalized, include_baseline=False)
    return report.aggregate("model")["micro"]["f1"]


def format_report(report: EvalReport, header: dict | None = None) -> str:
    """Canonical line-record report text (floats via repr, stable ordering)."""
    lines = ["# group detection evaluation report"]
    for key in sorted(header or {}):
        lines.append(f"# {key} {header[key]}")
    for r in report.rows:
        lines.append(
            f"clip {r.clip_id} {r.source} half_precision {r.precision!r} half_recall {r.recall!r} "
            f"half_f1 {r.f1!r} iou_auc {r.auc!r} iou_gm {r.iou_gm_value!r}"
        )
    sources = sorted({r.source for r in report.rows})
    for source in sources:
        agg = report.aggregate(source)
        for mode in ("micro", "macro"):
            m = agg[mode]
            lines.append(
                f"aggregate {mode} {source} half_precision {m['precision']!r} half_recall {m['recall']!r} "
                f"half_f1 {m['f1']!r} iou_auc {m['iou_auc']!r} iou_gm {m['iou_gm']!r}"
            )
    for source in sources:
        curve = report.aggregate(source)["micro"]["curve_f1"]
        for thr, f1 in zip(report.thresholds, curve):
            lines.append(f"curve {source} {thr!r} {f1!r}")
    return "\n".join(lines) + "\n"


ABLATION_VARIANTS = ("full", "no-pretrain", "freeze-phi")
ABLATION_FRACTIONS = (0.10, 0.30, 0.50, 1.00)


@dataclass(frozen=True)
class AblationCell:
    variant: str
    fraction: float
    seed: int
    precision: float
    recall: float
    f1: float


def run_ablation_cell(
    variant: str,
    fraction: float,
    seed: int,
    train_clips: Sequence[SceneClip],
    test_clips: Sequence[SceneClip],
    run_cfg: RunConfig,
    stage1_params: dict | None,
) -> AblationCell:
    if variant not in ABLATION_VARIANTS:
        raise ConfigurationError(f"unknown ablation variant {variant!r}")
    stage2_cfg = dataclasses.replace(
        run_cfg.stage2,
        label_fraction=fraction,
        fine_tune_phi=variant != "freeze-phi",
        seed=derive_seed(seed, 102),
    )
    params = None if variant == "no-pretrain" else stage1_params
    if params is None and variant != "no-pretrain":
        raise ConfigurationError(f"variant {variant} needs pretrained embedding parameters")
    result = train_stage2(
        train_clips,
        params,
        run_cfg.embedding,
        run_cfg.attention,
        stage2_cfg,
        normalized=run_cfg.normalized_features,
    )
    report = evaluate_model(result.model, test_clips, run_cfg.propagation, run_cfg.normalized_features, include_baseline=False)
    micro = report.aggregate("model")["micro"]
    return AblationCell(variant, fraction, seed, micro["precision"], micro["recall"], micro["f1"])


def run_ablation(
    train_clips: Sequence[SceneClip],
    test_clips: Sequence[SceneClip],
    run_cfg: RunConfig,
    variants: Sequence[str] = ABLATION_VARIANTS,
    fractions: Sequence[float] = ABLATION_FRACTIONS,
    seeds: Sequence[int] | None = None,
) -> list[AblationCell]:
    """The label-efficiency grid: variants x label fractions x seeds.

    Pretraining runs once per seed and is shared by the cells that use it;
    within one seed, lower fractions select nested subsets of the same clips.
    """
    seeds = list(seeds) if seeds is not None else [run_cfg.seed]
    cells: list[AblationCell] = []
    for seed in seeds:
        stage1_params = None
        if any(v != "no-pretrain" for v in variants):
            stage1_cfg = dataclasses.replace(run_cfg.stage1, seed=derive_seed(seed, 101))
            s1 = train_stage1(train_clips, run_cfg.embedding, stage1_cfg)
            stage1_params = module_state_numpy(s1.phi, "phi.")
        for variant in variants:
            for fraction in fractions:
                cells.append(
                    run_ablation_cell(variant, fraction, seed, train_clips, test_clips, run_cfg, stage1_params)
                )
    return cells


def format_ablation_report(cells: Sequence[AblationCell]) -> str:
    lines = ["# ablation report: variant x label fraction", "# columns: variant fraction seed precision recall f1"]
    for c in cells:
        lines.append(f"cell {c.variant} {c.fraction!r} {c.seed} {c.precision!r} {c.recall!r} {c.f1!r}")
    combos = sorted({(c.variant, c.fraction) for c in cells})
    for variant, fraction in combos:
        vals = [c.f1 for c in cells if (c.variant, c.fraction) == (variant, fraction)]
        lines.append(f"median {variant} {fraction!r} f1 {median(vals)!r}")
    return "\n".join(lines) + "\n"


def training_log_text(trace: Sequence[dict]) -> str:
    """Line-delimited training log: epoch loss lr wallclock_s [val_f1]."""
    lines = []
    for row in trace:
        base = f"{row['epoch']} {row['loss']!r} {row['lr']!r} {row['wallclock_s']:.3f}"
        if "val_f1" in row:
            base += f" {row['val_f1']!r}"
        lines.append(base)
    return "\n".join(lines) + "\n"
