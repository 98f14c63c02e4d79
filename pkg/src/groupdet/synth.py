"""Synthetic crowd scenes with planted groups.

Scenes imitate a wide-view surveillance geometry: subjects lower in the image
are nearer the camera and therefore taller, boxes scale accordingly, and the
16-joint skeleton is a humanoid template fitted to the box, leaned into the
walking direction, with arm/leg swing driven by an accumulated gait phase.
Groups are planted as spatially coherent clusters driven by one of four
motion models; loners wander independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, ValidationError
from .scene import GroupPartition, SceneClip

MOTION_MODELS = ("walk-together", "gather", "queue", "random-walk")

# MPII joint order: r_ankle, r_knee, r_hip, l_hip, l_knee, l_ankle, pelvis,
# thorax, neck, head_top, r_wrist, r_elbow, r_shoulder, l_shoulder, l_elbow,
# l_wrist. Offsets are fractions of (box width, box height), image y down.
_TEMPLATE = np.array(
    [
        [-0.10, 0.48], [-0.09, 0.25], [-0.08, 0.02], [0.08, 0.02], [0.09, 0.25],
        [0.10, 0.48], [0.00, 0.02], [0.00, -0.18], [0.00, -0.32], [0.00, -0.46],
        [-0.16, 0.05], [-0.14, -0.08], [-0.11, -0.22], [0.11, -0.22], [0.14, -0.08],
        [0.16, 0.05],
    ]
)

# How strongly each joint leans into the heading (head most, feet least) and
# how it swings with the gait phase (legs against arms).
_LEAN = np.array([0.0, 0.04, 0.08, 0.08, 0.04, 0.0, 0.08, 0.6, 0.8, 1.0, 0.25, 0.35, 0.55, 0.55, 0.35, 0.25])
_SWING = np.array([0.11, 0.055, 0.0, 0.0, -0.055, -0.11, 0.0, 0.0, 0.0, 0.0, -0.09, -0.045, 0.0, 0.0, 0.045, 0.09])

_LEAN_SCALE = 0.10
_HEIGHT_BASE_FRAC = 0.06  # person height at the top edge, as a fraction of scene height
_HEIGHT_SLOPE_FRAC = 0.07  # additional height per normalized image-y
_BOX_ASPECT = 0.42
_STRIDE_FRAC = 0.9  # stride length per gait cycle, in units of person height
_AREA_PER_SUBJECT = 3600.0  # px^2 floor used by the packing feasibility check


def skeleton_template() -> np.ndarray:
    """(16, 2) joint offsets in units of (box width, box height)."""
    return _TEMPLATE.copy()


@dataclass(frozen=True)
class SynthParams:
    n_groups: int = 4
    group_size_range: tuple[int, int] = (2, 4)
    n_loners: int = 2
    motion_model: str = "walk-together"
    frame_count: int = 10
    scene_extent: tuple[float, float] = (1000.0, 800.0)
    noise_scale: float = 2.0
    seed: int = 0

    def validate(self) -> "SynthParams":
        if self.n_groups < 0 or self.n_loners < 0:
            raise ValidationError("group and loner counts must be >= 0")
        lo, hi = self.group_size_range
        if not 2 <= lo <= hi:
            raise ValidationError(f"group size range must satisfy 2 <= min <= max, got {self.group_size_range}")
        if self.motion_model not in MOTION_MODELS:
            raise ValidationError(f"unknown motion model {self.motion_model!r}; expected one of {MOTION_MODELS}")
        if self.frame_count <= 0:
            raise ValidationError("frame_count must be positive")
        if self.scene_extent[0] <= 0 or self.scene_extent[1] <= 0:
            raise ValidationError("scene extent must be positive")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be >= 0")
        return self


def _unit(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def _bounce(p: np.ndarray, v: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One reflected step of p by v inside the [lo, hi] box."""
    q = p + v
    v = v.copy()
    for d in (0, 1):
        if q[d] < lo[d]:
            q[d] = 2 * lo[d] - q[d]
            v[d] = -v[d]
        elif q[d] > hi[d]:
            q[d] = 2 * hi[d] - q[d]
            v[d] = -v[d]
    return q, v


def _place_group_centers(rng, n_groups, lo, hi, min_sep) -> list[np.ndarray]:
    centers: list[np.ndarray] = []
    for _ in range(n_groups):
        for _try in range(4000):
            c = rng.uniform(lo, hi)
            if all(np.linalg.norm(c - o) >= min_sep for o in centers):
                centers.append(c)
                break
        else:
            raise GenerationError(
                f"could not place {n_groups} group centers with separation {min_sep:.0f}px; scene too crowded"
            )
    return centers


def _member_offsets(rng, size, spread) -> np.ndarray:
    offsets: list[np.ndarray] = []
    for _ in range(size):
        best = None
        for _try in range(200):
            r = spread * math.sqrt(rng.uniform(0.1, 1.0))
            o = r * _unit(rng.uniform(0.0, 2 * math.pi))
            if all(np.linalg.norm(o - p) >= 14.0 for p in offsets):
                best = o
                break
            best = o
        offsets.append(best)
    return np.array(offsets)


def generate_synthetic_scene(params: SynthParams) -> SceneClip:
    """Deterministically build one clip with planted groups and wandering loners."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    w_scene, h_scene = params.scene_extent
    t_frames = params.frame_count

    sizes = [int(s) for s in rng.integers(params.group_size_range[0], params.group_size_range[1] + 1, params.n_groups)]
    n_total = sum(sizes) + params.n_loners
    if n_total == 0:
        raise GenerationError("nothing to generate: zero groups and zero loners")
    if n_total * _AREA_PER_SUBJECT > 0.55 * w_scene * h_scene:
        raise GenerationError(f"{n_total} subjects exceed the scene area {w_scene:.0f}x{h_scene:.0f}")

    margin = min(0.18 * min(w_scene, h_scene), 150.0)
    lo = np.array([margin, margin])
    hi = np.array([w_scene - margin, h_scene - margin])
    if np.any(hi <= lo):
        raise GenerationError("scene extent too small for the placement margin")

    min_sep = min(0.14 * math.hypot(w_scene, h_scene), 0.45 * float(min(hi - lo)))
    group_centers = _place_group_centers(rng, params.n_groups, lo, hi, min_sep)

    # per-subject static attributes
    height_factor = rng.uniform(0.92, 1.08, n_total)
    phase0 = rng.uniform(0.0, 2 * math.pi, n_total)

    slot = 0
    group_slots: list[list[int]] = []
    group_state = []
    for g, size in enumerate(sizes):
        spread = rng.uniform(25.0, 110.0)
        offsets = _member_offsets(rng, size, spread)
        members = list(range(slot, slot + size))
        slot += size
        group_slots.append(members)
        heading = rng.uniform(0.0, 2 * math.pi)
        speed = rng.uniform(4.0, 12.0)
        group_state.append(
            {
                "base": group_centers[g].copy(),
                "vel": speed * _unit(heading),
                "speed": speed,
                "offsets": offsets.copy(),
                "gap_dir": _unit(heading),
            }
        )
    loner_slots = list(range(sum(sizes), n_total))
    loner_state = []
    for m in loner_slots:
        loner_state.append(
            {
                "pos": rng.uniform(lo, hi),
                "angle": rng.uniform(0.0, 2 * math.pi),
                "speed": rng.uniform(3.0, 10.0),
            }
        )

    model = params.motion_model
    if model == "gather":
        for st in group_state:
            st["cur"] = st["offsets"] * 2.2  # start dispersed, converge to the tight layout
    if model == "queue":
        for g, st in enumerate(group_state):
            u = st["gap_dir"]
            st["offsets"] = np.array([-26.0 * k * u for k in range(len(st["offsets"]))])
    if model == "random-walk":
        for st in group_state:
            st["cur"] = st["offsets"].copy()

    positions = np.zeros((t_frames, n_total, 2))
    headings = np.zeros((t_frames, n_total, 2))
    headings[:, :, 0] = 1.0
    step_len = np.zeros((t_frames, n_total))

    for t in range(t_frames):
        for g, st in enumerate(group_state):
            members = group_slots[g]
            if t > 0:
                if model in ("walk-together", "queue"):
                    st["base"], st["vel"] = _bounce(st["base"], st["vel"], lo, hi)
                elif model == "gather":
                    st["cur"] = st["cur"] + 0.35 * (st["offsets"] - st["cur"])
                elif model == "random-walk":
                    jitter = rng.uniform(-1.0, 1.0, st["cur"].shape) * 6.0
                    st["cur"] = st["cur"] + 0.35 * (st["offsets"] - st["cur"]) + jitter
            if model in ("walk-together", "queue"):
                cur = st["offsets"]
                u = st["vel"] / (np.linalg.norm(st["vel"]) + 1e-12)
                for k, m in enumerate(members):
                    positions[t, m] = st["base"] + cur[k]
                    headings[t, m] = u
                    step_len[t, m] = st["speed"] if t > 0 else 0.0
            else:
                for k, m in enumerate(members):
                    prev = positions[t - 1, m] if t > 0 else None
                    positions[t, m] = st["base"] + st["cur"][k]
                    if prev is not None:
                        d = positions[t, m] - prev
                        n = np.linalg.norm(d)
                        step_len[t, m] = n
                        if n > 1e-9:
                            headings[t, m] = d / n
                        else:
                            headings[t, m] = headings[t - 1, m]
        for j, st in enumerate(loner_state):
            m = loner_slots[j]
            if t > 0:
                st["angle"] += rng.uniform(-0.5, 0.5)
                st["pos"], _ = _bounce(st["pos"], st["speed"] * _unit(st["angle"]), lo, hi)
            positions[t, m] = st["pos"]
            headings[t, m] = _unit(st["angle"])
            step_len[t, m] = st["speed"] if t > 0 else 0.0

    positions = positions + rng.uniform(-params.noise_scale, params.noise_scale, positions.shape)

    # boxes from the perspective height model, joints from the posed template
    boxes = np.zeros((t_frames, n_total, 4))
    joints = np.zeros((t_frames, n_total, 16, 2))
    phase = phase0.copy()
    for t in range(t_frames):
        cy = positions[t, :, 1]
        h_person = (_HEIGHT_BASE_FRAC * h_scene + _HEIGHT_SLOPE_FRAC * cy) * height_factor
        w_person = _BOX_ASPECT * h_person
        if t > 0:
            phase = phase + 2 * math.pi * step_len[t] / (_STRIDE_FRAC * h_person)
        boxes[t, :, 0] = positions[t, :, 0]
        boxes[t, :, 1] = cy
        boxes[t, :, 2] = w_person
        boxes[t, :, 3] = h_person
        base = positions[t, :, None, :] + _TEMPLATE[None, :, :] * np.stack([w_person, h_person], axis=1)[:, None, :]
        lean = _LEAN[None, :, None] * (_LEAN_SCALE * h_person)[:, None, None] * headings[t, :, None, :]
        swing = _SWING[None, :, None] * (h_person * np.sin(phase))[:, None, None] * headings[t, :, None, :]
        joints[t] = base + lean + swing
    joints = joints + rng.uniform(-params.noise_scale, params.noise_scale, joints.shape)

    presence = np.ones((t_frames, n_total), dtype=bool)
    gt = tuple(
        GroupPartition(f, tuple(frozenset(members) for members in group_slots))
        for f in range(t_frames)
    )
    clip = SceneClip(
        clip_id=f"synth-{params.motion_model}-{params.seed}",
        boxes=boxes,
        joints=joints,
        presence=presence,
        scene_extent=params.scene_extent,
        gt_partition=gt,
    )
    return clip.validate()
