"""Clip dataset readers and writers.

Three on-disk layouts are supported:

native
    Line-delimited text. A clip starts with a header record
    ``clip <id> <T> <N> <width> <height>`` followed by one record per present
    subject per frame, ``<frame> <subject> cx cy w h j1x j1y ... j16x j16y``,
    and optional ``group <frame> <gid> <subject>`` records. All numbers are
    decimal text; floats are written with ``repr`` so a read/write cycle is
    byte-stable.

panda-like
    One JSON document per file mirroring a wide-area tracking benchmark
    layout: top-level ``scene name`` / ``image size`` / ``frame count``,
    ``tracks`` as a list of ``{"track id", "frames": [{"frame id", "rect":
    {"tl": {x, y}, "br": {x, y}}, "joints"?}]}`` with 1-based frame ids, and
    ``groups`` as ``[{"group id", "members": [track ids], "frames"?}]``.
    Track ids map to subject slots in ascending order. Group annotations
    without a ``frames`` list are clip-level and are broadcast to all frames.

jrdb-like
    One JSON document per file mirroring a robot-platform benchmark layout:
    ``labels`` maps frame keys ("0", "1", ...) to detection lists with
    ``label_id`` ("pedestrian:<id>"), ``box`` ([x, y, w, h], top-left based),
    ``social_group`` ({"cluster_ID": int}) and optional ``keypoints``.
    Social-group clusters are per frame natively.

When a source provides no skeleton, joints are synthesized by fitting the
standard 16-joint template to the subject's box (see synth.skeleton_template).
"""

from __future__ import annotations

import json
import math
import os
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, ParseError, ValidationError
from .scene import GroupPartition, N_JOINTS, SceneClip, broadcast_partition

SCHEMAS = ("native", "panda-like", "jrdb-like")
_BODY_FIELDS = 2 + 4 + 2 * N_JOINTS  # frame subject box joints


def _fmt(x: float) -> str:
    return repr(float(x))


def load_clip_dataset(path: str, schema: str = "native", group_mode: str = "auto") -> list[SceneClip]:
    """Read every clip in ``path`` (a file, or a directory scanned in name order).

    group_mode controls how group annotations become per-frame partitions:
    "per-frame" keeps frame-specific groups, "broadcast" applies clip-level
    groups to every frame, and "auto" follows the source layout (broadcast for
    panda-like clip-level annotations, per-frame otherwise).
    """
    if schema not in SCHEMAS:
        raise ParseError(f"unknown schema {schema!r}; expected one of {SCHEMAS}", path=path)
    if group_mode not in ("auto", "per-frame", "broadcast"):
        raise ParseError(f"unknown group mode {group_mode!r}", path=path)
    if not os.path.exists(path):
        raise ParseError("dataset path does not exist", path=path)
    files = [path]
    if os.path.isdir(path):
        files = sorted(
            os.path.join(path, name) for name in os.listdir(path) if not name.startswith(".")
        )
        if not files:
            raise ParseError("dataset directory is empty", path=path)
    clips: list[SceneClip] = []
    for f in files:
        if schema == "native":
            clips.extend(_load_native(f))
        elif schema == "panda-like":
            clips.append(_load_panda_like(f, group_mode))
        else:
            clips.append(_load_jrdb_like(f, group_mode))
    return clips


def save_clip_dataset(clips: Sequence[SceneClip], path: str) -> None:
    """Write clips in the native schema, in canonical record order."""
    lines: list[str] = []
    for clip in clips:
        clip.validate()
        w, h = clip.scene_extent
        lines.append(f"clip {clip.clip_id} {clip.n_frames} {clip.n_slots} {_fmt(w)} {_fmt(h)}")
        for f in range(clip.n_frames):
            for s in clip.present_indices(f):
                nums = list(clip.boxes[f, s]) + list(clip.joints[f, s].reshape(-1))
                lines.append(f"{f} {s} " + " ".join(_fmt(x) for x in nums))
        if clip.gt_partition is not None:
            for part in clip.gt_partition:
                for gid, group in enumerate(sorted(part.groups, key=min)):
                    for s in sorted(group):
                        lines.append(f"group {part.frame_index} {gid} {s}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def _parse_float(tok: str, path: str, line_no: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"not a number: {tok!r}", path=path, line=line_no) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite coordinate {tok!r}", path=path, line=line_no)
    return v


def _parse_int(tok: str, path: str, line_no: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"not an integer: {tok!r}", path=path, line=line_no) from None


class _NativeClipBuilder:
    def __init__(self, clip_id, t, n, extent, path, line_no):
        if t <= 0 or n <= 0:
            raise ParseError(f"clip {clip_id}: T and N must be positive", path=path, line=line_no)
        self.clip_id = clip_id
        self.t = t
        self.n = n
        self.extent = extent
        self.path = path
        self.boxes = np.zeros((t, n, 4))
        self.joints = np.zeros((t, n, N_JOINTS, 2))
        self.presence = np.zeros((t, n), dtype=bool)
        self.groups: dict[int, dict[int, set[int]]] = {}
        self.has_groups = False

    def check_frame(self, frame, line_no):
        if not 0 <= frame < self.t:
            raise ParseError(f"frame {frame} out of range for T={self.t}", path=self.path, line=line_no)

    def check_subject(self, subject, line_no):
        if subject >= self.n:
            raise CapacityError(
                f"subject {subject} exceeds declared capacity N={self.n}", path=self.path, line=line_no
            )
        if subject < 0:
            raise ParseError(f"negative subject index {subject}", path=self.path, line=line_no)

    def add_body(self, frame, subject, values, line_no):
        self.check_frame(frame, line_no)
        self.check_subject(subject, line_no)
        if self.presence[frame, subject]:
            raise ParseError(f"duplicate record for frame {frame} subject {subject}", path=self.path, line=line_no)
        self.presence[frame, subject] = True
        self.boxes[frame, subject] = values[:4]
        self.joints[frame, subject] = np.asarray(values[4:]).reshape(N_JOINTS, 2)

    def add_group(self, frame, gid, subject, line_no):
        self.check_frame(frame, line_no)
        self.check_subject(subject, line_no)
        self.has_groups = True
        self.groups.setdefault(frame, {}).setdefault(gid, set()).add(subject)

    def finish(self) -> SceneClip:
        gt = None
        if self.has_groups:
            gt = tuple(
                GroupPartition(f, tuple(frozenset(g) for _, g in sorted(self.groups.get(f, {}).items())))
                for f in range(self.t)
            )
        clip = SceneClip(self.clip_id, self.boxes, self.joints, self.presence, self.extent, gt)
        try:
            return clip.validate()
        except ValidationError as e:
            raise ParseError(str(e), path=self.path) from e


def _load_native(path: str) -> list[SceneClip]:
    clips: list[SceneClip] = []
    builder: _NativeClipBuilder | None = None
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            tokens = raw.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            if tokens[0] == "clip":
                if builder is not None:
                    clips.append(builder.finish())
                if len(tokens) != 6:
                    raise ParseError("clip header needs: clip <id> <T> <N> <width> <height>", path=path, line=line_no)
                builder = _NativeClipBuilder(
                    tokens[1],
                    _parse_int(tokens[2], path, line_no),
                    _parse_int(tokens[3], path, line_no),
                    (_parse_float(tokens[4], path, line_no), _parse_float(tokens[5], path, line_no)),
                    path,
                    line_no,
                )
            elif tokens[0] == "group":
                if builder is None:
                    raise ParseError("group record before any clip header", path=path, line=line_no)
                if len(tokens) != 4:
                    raise ParseError("group record needs: group <frame> <gid> <subject>", path=path, line=line_no)
                builder.add_group(
                    _parse_int(tokens[1], path, line_no),
                    _parse_int(tokens[2], path, line_no),
                    _parse_int(tokens[3], path, line_no),
                    line_no,
                )
            else:
                if builder is None:
                    raise ParseError("subject record before any clip header", path=path, line=line_no)
                if len(tokens) != _BODY_FIELDS:
                    raise ParseError(
                        f"subject record needs {_BODY_FIELDS} fields, got {len(tokens)}", path=path, line=line_no
                    )
                frame = _parse_int(tokens[0], path, line_no)
                subject = _parse_int(tokens[1], path, line_no)
                values = [_parse_float(t, path, line_no) for t in tokens[2:]]
                builder.add_body(frame, subject, values, line_no)
    if builder is not None:
        clips.append(builder.finish())
    if not clips:
        raise ParseError("no clips found", path=path)
    return clips


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        raise ParseError(f"missing field {key!r}", path=path)
    return doc[key]


def _template_joints_for_box(box: np.ndarray) -> np.ndarray:
    # lazily imported; synth owns the joint template
    from .synth import skeleton_template

    cx, cy, w, h = box
    return np.array([cx, cy]) + skeleton_template() * np.array([w, h])


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", path=path, line=e.lineno) from e


def _load_panda_like(path: str, group_mode: str) -> SceneClip:
    doc = _load_json(path)
    clip_id = str(_require(doc, "scene name", path)).replace(" ", "_")
    size = _require(doc, "image size", path)
    extent = (float(_require(size, "width", path)), float(_require(size, "height", path)))
    t = int(_require(doc, "frame count", path))
    tracks = _require(doc, "tracks", path)
    track_ids = sorted(int(_require(tr, "track id", path)) for tr in tracks)
    if len(set(track_ids)) != len(track_ids):
        raise ParseError("duplicate track ids", path=path)
    slot_of = {tid: i for i, tid in enumerate(track_ids)}
    n = len(track_ids)
    boxes = np.zeros((t, n, 4))
    joints = np.zeros((t, n, N_JOINTS, 2))
    presence = np.zeros((t, n), dtype=bool)
    for tr in tracks:
        slot = slot_of[int(tr["track id"])]
        for rec in _require(tr, "frames", path):
            f = int(_require(rec, "frame id", path)) - 1  # 1-based in source
            if not 0 <= f < t:
                raise ParseError(f"frame id {f + 1} out of range for frame count {t}", path=path)
            if presence[f, slot]:
                raise ParseError(f"duplicate frame {f + 1} for track {tr['track id']}", path=path)
            rect = _require(rec, "rect", path)
            tl, br = _require(rect, "tl", path), _require(rect, "br", path)
            x0, y0 = float(tl["x"]), float(tl["y"])
            x1, y1 = float(br["x"]), float(br["y"])
            box = np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0])
            boxes[f, slot] = box
            presence[f, slot] = True
            if "joints" in rec:
                j = np.asarray(rec["joints"], dtype=np.float64)
                if j.shape != (N_JOINTS, 2):
                    raise ParseError(f"joints must be {N_JOINTS}x2, got {j.shape}", path=path)
                joints[f, slot] = j
            else:
                joints[f, slot] = _template_joints_for_box(box)
    gt = None
    if "groups" in doc and doc["groups"]:
        per_frame: dict[int, list[tuple[int, frozenset[int]]]] = {}
        clip_level: list[tuple[int, frozenset[int]]] = []
        for grp in doc["groups"]:
            members = frozenset(slot_of[int(m)] for m in _require(grp, "members", path))
            gid = int(_require(grp, "group id", path))
            if "frames" in grp and grp["frames"] is not None:
                for fr in grp["frames"]:
                    per_frame.setdefault(int(fr) - 1, []).append((gid, members))
            else:
                clip_level.append((gid, members))
        broadcast = group_mode == "broadcast" or (group_mode == "auto" and not per_frame)
        if broadcast:
            all_groups = [m for _, m in sorted(clip_level + [g for gs in per_frame.values() for g in gs])]
            gt = broadcast_partition(all_groups, presence)
        else:
            for gid, members in clip_level:
                for f in range(t):
                    per_frame.setdefault(f, []).append((gid, members))
            gt = tuple(
                GroupPartition(
                    f,
                    tuple(
                        kept
                        for _, m in sorted(per_frame.get(f, []))
                        if len(kept := frozenset(s for s in m if presence[f, s])) >= 2
                    ),
                )
                for f in range(t)
            )
    clip = SceneClip(clip_id, boxes, joints, presence, extent, gt)
    try:
        return clip.validate()
    except ValidationError as e:
        raise ParseError(str(e), path=path) from e


def _load_jrdb_like(path: str, group_mode: str) -> SceneClip:
    doc = _load_json(path)
    clip_id = str(doc.get("clip_id", os.path.splitext(os.path.basename(path))[0]))
    size = _require(doc, "image size", path)
    extent = (float(_require(size, "width", path)), float(_require(size, "height", path)))
    labels = _require(doc, "labels", path)
    try:
        frames = sorted(int(k) for k in labels)
    except ValueError as e:
        raise ParseError(f"frame keys must be integers: {e}", path=path) from None
    if not frames:
        raise ParseError("labels is empty", path=path)
    t = frames[-1] + 1
    ped_ids: set[int] = set()
    for k in labels:
        for det in labels[k]:
            label_id = str(_require(det, "label_id", path))
            if not label_id.startswith("pedestrian:"):
                raise ParseError(f"unsupported label_id {label_id!r}", path=path)
            ped_ids.add(int(label_id.split(":", 1)[1]))
    slot_of = {pid: i for i, pid in enumerate(sorted(ped_ids))}
    n = len(slot_of)
    boxes = np.zeros((t, n, 4))
    joints = np.zeros((t, n, N_JOINTS, 2))
    presence = np.zeros((t, n), dtype=bool)
    clusters: dict[int, dict[int, set[int]]] = {}
    for k in labels:
        f = int(k)
        for det in labels[k]:
            slot = slot_of[int(str(det["label_id"]).split(":", 1)[1])]
            if presence[f, slot]:
                raise ParseError(f"duplicate detection for {det['label_id']} at frame {f}", path=path)
            x, y, w, h = (float(v) for v in _require(det, "box", path))
            box = np.array([x + w / 2.0, y + h / 2.0, w, h])
            boxes[f, slot] = box
            presence[f, slot] = True
            if "keypoints" in det:
                j = np.asarray(det["keypoints"], dtype=np.float64)
                if j.shape != (N_JOINTS, 2):
                    raise ParseError(f"keypoints must be {N_JOINTS}x2, got {j.shape}", path=path)
                joints[f, slot] = j
            else:
                joints[f, slot] = _template_joints_for_box(box)
            if "social_group" in det:
                cid = int(_require(det["social_group"], "cluster_ID", path))
                clusters.setdefault(f, {}).setdefault(cid, set()).add(slot)
    gt = None
    if clusters:
        if group_mode == "broadcast":
            merged: dict[int, set[int]] = {}
            for per in clusters.values():
                for cid, members in per.items():
                    merged.setdefault(cid, set()).update(members)
            groups = [frozenset(m) for _, m in sorted(merged.items()) if len(m) >= 2]
            gt = broadcast_partition(groups, presence)
        else:
            gt = tuple(
                GroupPartition(
                    f,
                    tuple(frozenset(m) for _, m in sorted(clusters.get(f, {}).items()) if len(m) >= 2),
                )
                for f in range(t)
            )
    clip = SceneClip(clip_id, boxes, joints, presence, extent, gt)
    try:
        return clip.validate()
    except ValidationError as e:
        raise ParseError(str(e), path=path) from e
