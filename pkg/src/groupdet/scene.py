"""Scene clip data model: tracked subjects, presence masks, and group partitions.

A clip covers T frames of up to N subject slots. A slot may be absent in a
frame, in which case its box and joints are all-zero and the presence mask is
false. Ground-truth grouping, when available, is stored per frame as a
partition of the present subjects into disjoint groups.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

N_JOINTS = 16


def _readonly(a: np.ndarray, dtype) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GroupPartition:
    """Division of one frame's present subjects into disjoint groups.

    ``converged`` is diagnostic metadata set by the label-propagation
    partitioner; it does not participate in equality.
    """

    frame_index: int
    groups: tuple[frozenset[int], ...]
    converged: bool = field(default=True, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(frozenset(g) for g in self.groups))

    def validate(self, n_slots: int | None = None, presence: np.ndarray | None = None) -> "GroupPartition":
        if self.frame_index < 0:
            raise ValidationError(f"negative frame index {self.frame_index}")
        seen: set[int] = set()
        for g in self.groups:
            if not g:
                raise ValidationError("empty group in partition")
            for s in g:
                if s in seen:
                    raise ValidationError(f"subject {s} appears in more than one group")
                if n_slots is not None and not 0 <= s < n_slots:
                    raise ValidationError(f"subject index {s} out of range for {n_slots} slots")
                if presence is not None and not presence[s]:
                    raise ValidationError(f"group references absent subject {s} at frame {self.frame_index}")
                seen.add(s)
        return self

    def member_set(self) -> frozenset[int]:
        return frozenset(s for g in self.groups for s in g)


@dataclass(frozen=True)
class SceneClip:
    """T frames of up to N subjects: boxes, skeleton joints, presence, optional grouping.

    boxes:   (T, N, 4) float64, per-subject (cx, cy, w, h) in pixels.
    joints:  (T, N, 16, 2) float64 pixel coordinates.
    presence:(T, N) bool.
    gt_partition: one GroupPartition per frame, or None when unlabeled.
    """

    clip_id: str
    boxes: np.ndarray
    joints: np.ndarray
    presence: np.ndarray
    scene_extent: tuple[float, float]
    gt_partition: tuple[GroupPartition, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "boxes", _readonly(self.boxes, np.float64))
        object.__setattr__(self, "joints", _readonly(self.joints, np.float64))
        object.__setattr__(self, "presence", _readonly(self.presence, bool))
        object.__setattr__(self, "scene_extent", (float(self.scene_extent[0]), float(self.scene_extent[1])))
        if self.gt_partition is not None:
            object.__setattr__(self, "gt_partition", tuple(self.gt_partition))

    @property
    def n_frames(self) -> int:
        return self.boxes.shape[0]

    @property
    def n_slots(self) -> int:
        return self.boxes.shape[1]

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.scene_extent[0], self.scene_extent[1]))

    @property
    def centers(self) -> np.ndarray:
        """(T, N, 2) box centers."""
        return self.boxes[..., :2]

    def present_indices(self, frame: int) -> np.ndarray:
        return np.flatnonzero(self.presence[frame])

    def fully_present_indices(self) -> np.ndarray:
        """Subjects present in every frame (the swap transform operates on these)."""
        return np.flatnonzero(self.presence.all(axis=0))

    def validate(self) -> "SceneClip":
        if not self.clip_id or any(c.isspace() for c in self.clip_id):
            raise ValidationError(f"clip id must be nonempty and free of whitespace: {self.clip_id!r}")
        t, n = self.presence.shape
        if t <= 0 or n <= 0:
            raise ValidationError(f"clip {self.clip_id}: T and N must be positive, got T={t} N={n}")
        if self.boxes.shape != (t, n, 4):
            raise ValidationError(f"clip {self.clip_id}: boxes shape {self.boxes.shape} != {(t, n, 4)}")
        if self.joints.shape != (t, n, N_JOINTS, 2):
            raise ValidationError(f"clip {self.clip_id}: joints shape {self.joints.shape} != {(t, n, N_JOINTS, 2)}")
        if self.scene_extent[0] <= 0 or self.scene_extent[1] <= 0:
            raise ValidationError(f"clip {self.clip_id}: scene extent must be positive, got {self.scene_extent}")
        pres3 = self.presence[:, :, None]
        if not np.isfinite(self.boxes[self.presence]).all():
            raise ValidationError(f"clip {self.clip_id}: non-finite box for a present subject")
        if not np.isfinite(self.joints[self.presence]).all():
            raise ValidationError(f"clip {self.clip_id}: non-finite joints for a present subject")
        if np.any(self.boxes[~self.presence] != 0.0):
            raise ValidationError(f"clip {self.clip_id}: absent subject has nonzero box")
        if np.any(self.joints[~self.presence] != 0.0):
            raise ValidationError(f"clip {self.clip_id}: absent subject has nonzero joints")
        del pres3
        if self.gt_partition is not None:
            if len(self.gt_partition) != t:
                raise ValidationError(
                    f"clip {self.clip_id}: {len(self.gt_partition)} partitions for {t} frames"
                )
            for f, part in enumerate(self.gt_partition):
                if part.frame_index != f:
                    raise ValidationError(f"clip {self.clip_id}: partition at position {f} has frame_index {part.frame_index}")
                part.validate(n_slots=n, presence=self.presence[f])
        return self

    def without_labels(self) -> "SceneClip":
        if self.gt_partition is None:
            return self
        return SceneClip(self.clip_id, self.boxes, self.joints, self.presence, self.scene_extent, None)


def relation_matrix_from_partition(partition: GroupPartition, n_slots: int) -> np.ndarray:
    """Binary (N, N) same-group matrix for one frame.

    Entry (i, j) is 1 exactly when i != j share a group. The diagonal is 0 and
    subjects outside every group have all-zero rows and columns.
    """
    r = np.zeros((n_slots, n_slots), dtype=np.float64)
    for g in partition.groups:
        idx = sorted(g)
        for s in idx:
            if not 0 <= s < n_slots:
                raise ValidationError(f"subject index {s} out of range for {n_slots} slots")
        for a in idx:
            for b in idx:
                if a != b:
                    r[a, b] = 1.0
    return r


def relation_tensor_from_clip(clip: SceneClip) -> np.ndarray:
    """(T, N, N) stack of per-frame ground-truth relation matrices."""
    if clip.gt_partition is None:
        raise ValidationError(f"clip {clip.clip_id} has no ground-truth partition")
    return np.stack([relation_matrix_from_partition(p, clip.n_slots) for p in clip.gt_partition])


def pair_mask(presence_t: np.ndarray) -> np.ndarray:
    """(N, N) bool mask of scored pairs: both present, off-diagonal."""
    m = np.outer(presence_t, presence_t)
    np.fill_diagonal(m, False)
    return m


def partition_from_groups(frame_index: int, groups: Iterable[Iterable[int]]) -> GroupPartition:
    return GroupPartition(frame_index, tuple(frozenset(g) for g in groups))


def broadcast_partition(groups: Sequence[Iterable[int]], presence: np.ndarray) -> tuple[GroupPartition, ...]:
    """Clip-level group annotation applied to every frame.

    Members absent in a frame are dropped from that frame's copy of the group;
    a group left with fewer than two members disappears for that frame.
    """
    parts = []
    for f in range(presence.shape[0]):
        frame_groups = []
        for g in groups:
            kept = frozenset(s for s in g if presence[f, s])
            if len(kept) >= 2:
                frame_groups.append(kept)
        parts.append(GroupPartition(f, tuple(frame_groups)))
    return tuple(parts)
