"""Turn relation matrices into per-frame group partitions.

Relations are binarized at a threshold and labels are propagated over the
resulting graph: every present subject starts with its own label and
synchronously adopts the smallest label among itself and its linked
neighbors. This converges, within the graph diameter, to one label per
connected component, which makes the partitioner deterministic and lets the
number of groups fall out of the graph itself. Size-1 groups are dropped.

The distance-matrix baseline runs the same propagation on a graph built by
thresholding pairwise distances instead of predicted relations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .features import pairwise_distances
from .scene import GroupPartition, SceneClip

_INT_MAX = np.iinfo(np.int64).max


@dataclass(frozen=True)
class PropagationConfig:
    threshold: float = 0.5  # relation binarization cutoff
    max_iters: int = 100
    distance_cutoff: float = 0.1  # baseline link distance, as a fraction of the diagonal

    def validate(self) -> "PropagationConfig":
        if not 0.0 < self.threshold < 1.0:
            raise ValidationError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if not 0.0 < self.distance_cutoff <= 1.0:
            raise ValidationError(f"distance_cutoff must be in (0, 1], got {self.distance_cutoff}")
        return self


def propagate_labels(linked: np.ndarray, presence: np.ndarray, max_iters: int) -> tuple[np.ndarray, bool]:
    """Synchronous min-label propagation over a boolean adjacency.

    Returns per-subject labels (absent subjects get -1) and a convergence
    flag; with enough iterations labels equal the smallest subject index in
    each connected component.
    """
    n = linked.shape[0]
    labels = np.where(presence, np.arange(n, dtype=np.int64), -1)
    converged = False
    for _ in range(max_iters):
        lab_mat = np.where(linked, labels[None, :], _INT_MAX)
        neighbor_min = lab_mat.min(axis=1)
        new = np.where(presence, np.minimum(labels, neighbor_min), -1)
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
    return labels, converged


def drop_singletons(partition: GroupPartition) -> GroupPartition:
    return GroupPartition(
        partition.frame_index,
        tuple(g for g in partition.groups if len(g) >= 2),
        converged=partition.converged,
    )


def partition_from_relations(
    relations: np.ndarray,
    presence: np.ndarray,
    cfg: PropagationConfig | None = None,
    frame_index: int = 0,
) -> GroupPartition:
    """Partition one frame's subjects by propagating labels over binarized relations."""
    cfg = (cfg or PropagationConfig()).validate()
    relations = np.asarray(relations, dtype=np.float64)
    n = relations.shape[0]
    if relations.shape != (n, n):
        raise ValidationError(f"relation matrix must be square, got {relations.shape}")
    if not np.isfinite(relations).all():
        raise ValidationError("relation matrix must be finite")
    presence = np.asarray(presence, dtype=bool)
    if presence.shape != (n,):
        raise ValidationError("presence mask does not match the relation matrix")
    linked = relations > cfg.threshold
    linked &= presence[:, None] & presence[None, :]
    np.fill_diagonal(linked, False)
    linked |= linked.T  # defensive symmetrization for near-threshold asymmetries
    labels, converged = propagate_labels(linked, presence, cfg.max_iters)
    groups: dict[int, set[int]] = {}
    for i in np.flatnonzero(presence):
        groups.setdefault(int(labels[i]), set()).add(int(i))
    partition = GroupPartition(
        frame_index,
        tuple(frozenset(g) for _, g in sorted(groups.items())),
        converged=converged,
    )
    return drop_singletons(partition)


def partitions_from_relation_tensor(
    relations: np.ndarray, presence: np.ndarray, cfg: PropagationConfig | None = None
) -> list[GroupPartition]:
    """Per-frame partitions from a (T, N, N) relation tensor."""
    return [
        partition_from_relations(relations[t], presence[t], cfg, frame_index=t)
        for t in range(relations.shape[0])
    ]


def baseline_partition_from_distances(clip: SceneClip, cfg: PropagationConfig | None = None) -> list[GroupPartition]:
    """Distance-only baseline: link subjects closer than the cutoff, propagate, drop singletons."""
    cfg = (cfg or PropagationConfig()).validate()
    d = pairwise_distances(clip.centers, clip.presence, clip.diagonal)
    similarity = 1.0 - d
    sim_threshold = 1.0 - cfg.distance_cutoff
    out = []
    for t in range(clip.n_frames):
        linked = similarity[t] > sim_threshold
        linked &= clip.presence[t][:, None] & clip.presence[t][None, :]
        np.fill_diagonal(linked, False)
        labels, converged = propagate_labels(linked, clip.presence[t], cfg.max_iters)
        groups: dict[int, set[int]] = {}
        for i in np.flatnonzero(clip.presence[t]):
            groups.setdefault(int(labels[i]), set()).add(int(i))
        part = GroupPartition(t, tuple(frozenset(g) for _, g in sorted(groups.items())), converged=converged)
        out.append(drop_singletons(part))
    return out


def consensus_partition(partitions: Sequence[GroupPartition], n_slots: int, min_share: float = 0.5) -> GroupPartition:
    """Clip-level reporting partition: pairs together in more than ``min_share`` of frames.

    Majority pair votes form a graph whose connected components are the
    consensus groups (frame_index -1 marks the clip-level summary).
    """
    votes = np.zeros((n_slots, n_slots))
    for part in partitions:
        for g in part.groups:
            for a in g:
                for b in g:
                    if a != b:
                        votes[a, b] += 1
    linked = votes > min_share * max(len(partitions), 1)
    labels, _ = propagate_labels(linked, np.ones(n_slots, dtype=bool), n_slots + 1)
    groups: dict[int, set[int]] = {}
    for i in range(n_slots):
        groups.setdefault(int(labels[i]), set()).add(i)
    return drop_singletons(GroupPartition(-1, tuple(frozenset(g) for _, g in sorted(groups.items()))))
