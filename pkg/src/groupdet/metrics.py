"""Group detection metrics: Half precision/recall/F1, threshold curves, pairwise matrix IoU.

A predicted group counts as correct when its member-set IoU with a matched
ground-truth group exceeds a threshold (0.5 for the classic metric). Matching
is greedy one-to-one in descending IoU order; an optimal max-cardinality
matcher is available for comparison since the two can differ on contrived
overlaps. The threshold curve sweeps 0.5 to 1.0 and reports the normalized
area under F1; the matrix IoU scores binarized pairwise relations directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

DEFAULT_CURVE_THRESHOLDS = tuple(k / 100.0 for k in range(50, 101, 5))


def group_iou(pred: Iterable[int], gt: Iterable[int]) -> float:
    """Member-set intersection over union; empty prediction scores 0."""
    p, g = set(pred), set(gt)
    if not g:
        raise ValidationError("ground-truth group must be nonempty")
    if not p:
        return 0.0
    return len(p & g) / len(p | g)


@dataclass(frozen=True)
class HalfMetricResult:
    precision: float
    recall: float
    f1: float
    matched_pairs: tuple[tuple[frozenset, frozenset, float], ...]


@dataclass(frozen=True)
class CurveResult:
    thresholds: tuple[float, ...]
    f1_at: tuple[float, ...]
    auc: float


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def greedy_match(pred_groups: Sequence, gt_groups: Sequence) -> list[tuple[int, int, float]]:
    """One-to-one matches in descending IoU order; ties broken by index."""
    cands = []
    for pi, p in enumerate(pred_groups):
        for gi, g in enumerate(gt_groups):
            iou = group_iou(p, g)
            if iou > 0.0:
                cands.append((pi, gi, iou))
    cands.sort(key=lambda c: (-c[2], c[0], c[1]))
    used_p: set[int] = set()
    used_g: set[int] = set()
    matches = []
    for pi, gi, iou in cands:
        if pi in used_p or gi in used_g:
            continue
        used_p.add(pi)
        used_g.add(gi)
        matches.append((pi, gi, iou))
    return matches


def iou_qualifies(iou: float, threshold: float, strict: bool = True) -> bool:
    """Whether an IoU clears the threshold; 1.0 always means exact match."""
    return _qualifies(iou, threshold, strict)


def optimal_match_count(pred_groups: Sequence, gt_groups: Sequence, iou_threshold: float, strict: bool = True) -> int:
    """Maximum number of one-to-one pairs whose IoU clears the threshold.

    Max-cardinality bipartite matching by augmenting paths over the qualified
    pairs; used to quantify how far the committed greedy rule can fall short.
    """
    qualified = [
        [gi for gi, g in enumerate(gt_groups) if _qualifies(group_iou(p, g), iou_threshold, strict)]
        for p in pred_groups
    ]
    match_of_gt: dict[int, int] = {}

    def try_assign(pi: int, banned: set[int]) -> bool:
        for gi in qualified[pi]:
            if gi in banned:
                continue
            banned.add(gi)
            if gi not in match_of_gt or try_assign(match_of_gt[gi], banned):
                match_of_gt[gi] = pi
                return True
        return False

    count = 0
    for pi in range(len(pred_groups)):
        if try_assign(pi, set()):
            count += 1
    return count


def _qualifies(iou: float, threshold: float, strict: bool) -> bool:
    if threshold >= 1.0:
        return iou >= 1.0  # strict inequality above 1 is unsatisfiable
    return iou > threshold if strict else iou >= threshold


def half_metrics(
    pred_groups: Sequence,
    gt_groups: Sequence,
    iou_threshold: float = 0.5,
    strict: bool = True,
    matching: str = "greedy",
) -> HalfMetricResult:
    """Group detection precision/recall/F1 at a member-IoU threshold."""
    pred_groups = [frozenset(g) for g in pred_groups]
    gt_groups = [frozenset(g) for g in gt_groups]
    if matching not in ("greedy", "optimal"):
        raise ValidationError(f"unknown matching rule {matching!r}")
    if matching == "optimal":
        correct = optimal_match_count(pred_groups, gt_groups, iou_threshold, strict)
        matched: tuple = ()
    else:
        matches = greedy_match(pred_groups, gt_groups)
        matched = tuple((pred_groups[pi], gt_groups[gi], iou) for pi, gi, iou in matches)
        correct = sum(1 for _, _, iou in matches if _qualifies(iou, iou_threshold, strict))
    precision = correct / len(pred_groups) if pred_groups else 0.0
    recall = correct / len(gt_groups) if gt_groups else 0.0
    return HalfMetricResult(precision, recall, _f1(precision, recall), matched)


def iou_auc(
    pred_groups: Sequence,
    gt_groups: Sequence,
    thresholds: Sequence[float] = DEFAULT_CURVE_THRESHOLDS,
    strict: bool = True,
) -> CurveResult:
    """F1 over an ascending IoU-threshold sweep plus the normalized area under it.

    The matching is computed once (it does not depend on the threshold); each
    threshold then re-counts the qualifying matched pairs, so F1 is
    non-increasing along the sweep. The 1.0 endpoint demands exact matches.
    """
    thresholds = tuple(float(t) for t in thresholds)
    if list(thresholds) != sorted(thresholds) or len(thresholds) < 2:
        raise ValidationError("thresholds must be ascending and at least two")
    pred_groups = [frozenset(g) for g in pred_groups]
    gt_groups = [frozenset(g) for g in gt_groups]
    matches = greedy_match(pred_groups, gt_groups)
    f1s = []
    for t in thresholds:
        correct = sum(1 for _, _, iou in matches if _qualifies(iou, t, strict))
        p = correct / len(pred_groups) if pred_groups else 0.0
        r = correct / len(gt_groups) if gt_groups else 0.0
        f1s.append(_f1(p, r))
    span = thresholds[-1] - thresholds[0]
    auc = float(np.trapezoid(f1s, thresholds) / span)
    return CurveResult(thresholds, tuple(f1s), auc)


def iou_gm(rel_pred: np.ndarray, rel_gt: np.ndarray, mask: np.ndarray) -> float:
    """Element-wise AND-sum over OR-sum of binary relation matrices within a mask.

    Two all-zero matrices agree perfectly and score 1.
    """
    rel_pred = np.asarray(rel_pred)
    rel_gt = np.asarray(rel_gt)
    mask = np.asarray(mask, dtype=bool)
    if rel_pred.shape != rel_gt.shape or rel_pred.shape != mask.shape:
        raise ValidationError("relation matrices and mask must share a shape")
    for name, m in (("prediction", rel_pred), ("ground truth", rel_gt)):
        if not np.isin(m[mask], (0, 1)).all():
            raise ValidationError(f"{name} matrix must be binary within the mask")
    num = np.logical_and(rel_pred[mask] == 1, rel_gt[mask] == 1).sum()
    den = np.logical_or(rel_pred[mask] == 1, rel_gt[mask] == 1).sum()
    if den == 0:
        return 1.0
    return float(num / den)


@dataclass(frozen=True)
class MatchCounts:
    """Raw counts that micro-averaged Half metrics are built from."""

    correct: int
    n_pred: int
    n_gt: int

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.correct + other.correct, self.n_pred + other.n_pred, self.n_gt + other.n_gt)

    def result(self) -> HalfMetricResult:
        p = self.correct / self.n_pred if self.n_pred else 0.0
        r = self.correct / self.n_gt if self.n_gt else 0.0
        return HalfMetricResult(p, r, _f1(p, r), ())


def match_counts(pred_groups: Sequence, gt_groups: Sequence, iou_threshold: float = 0.5, strict: bool = True) -> MatchCounts:
    matches = greedy_match([frozenset(g) for g in pred_groups], [frozenset(g) for g in gt_groups])
    correct = sum(1 for _, _, iou in matches if _qualifies(iou, iou_threshold, strict))
    return MatchCounts(correct, len(pred_groups), len(gt_groups))
