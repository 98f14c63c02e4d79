"""Input feature construction: skeleton features, positional encodings, distances.

Each subject in each frame contributes a 64-dim feature row: 32 dims of
normalized skeleton joint coordinates followed by a 32-dim sinusoidal
encoding of the box center. Absent subjects keep all-zero rows. A separate
pairwise channel holds center distances normalized by the scene diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .scene import N_JOINTS, SceneClip

SKELETON_DIM = 2 * N_JOINTS  # 32
POSITION_DIM = 32
FEATURE_DIM = SKELETON_DIM + POSITION_DIM  # 64

_N_FREQS = POSITION_DIM // 4  # 8 sine/cosine pairs per axis
_FREQS = 10000.0 ** (-2.0 * np.arange(_N_FREQS) / (POSITION_DIM // 2))


@dataclass(frozen=True)
class FeatureBlock:
    """Concatenated per-subject features: V = [K | P], with the presence mask."""

    V: np.ndarray  # (T, N, 64)
    K: np.ndarray  # (T, N, 32)
    P: np.ndarray  # (T, N, 32)
    presence: np.ndarray  # (T, N) bool

    def validate(self) -> "FeatureBlock":
        t, n = self.presence.shape
        if self.V.shape != (t, n, FEATURE_DIM) or self.K.shape != (t, n, SKELETON_DIM) or self.P.shape != (t, n, POSITION_DIM):
            raise ValidationError("feature block shapes inconsistent")
        if not np.isfinite(self.V).all():
            raise ValidationError("non-finite feature values")
        if not np.array_equal(self.V, np.concatenate([self.K, self.P], axis=-1)):
            raise ValidationError("V is not the concatenation of K and P")
        if np.any(self.V[~self.presence] != 0.0):
            raise ValidationError("absent subject has nonzero features")
        return self


@dataclass(frozen=True)
class DistanceChannel:
    """Pairwise center distances in units of the scene diagonal, clipped to [0, 1]."""

    D: np.ndarray  # (T, N, N)

    def validate(self) -> "DistanceChannel":
        t, n, m = self.D.shape
        if n != m:
            raise ValidationError("distance channel must be square per frame")
        if not np.isfinite(self.D).all() or self.D.min() < 0.0 or self.D.max() > 1.0:
            raise ValidationError("distances must be finite and in [0, 1]")
        if not np.allclose(self.D, np.swapaxes(self.D, 1, 2)):
            raise ValidationError("distance channel must be symmetric")
        if np.any(np.diagonal(self.D, axis1=1, axis2=2) != 0.0):
            raise ValidationError("distance channel diagonal must be zero")
        return self


def normalize_skeleton(joints: np.ndarray, scene_extent: tuple[float, float]) -> np.ndarray:
    """Flatten joint coordinates (joint-major: j1x j1y ... j16x j16y) divided by the scene extent.

    Accepts a single (16, 2) pose or any batch shaped (..., 16, 2).
    """
    w, h = float(scene_extent[0]), float(scene_extent[1])
    if w <= 0 or h <= 0:
        raise ValidationError(f"scene extent must be positive, got {scene_extent}")
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape[-2:] != (N_JOINTS, 2):
        raise ValidationError(f"expected (..., {N_JOINTS}, 2) joints, got {joints.shape}")
    if not np.isfinite(joints).all():
        raise ValidationError("non-finite joint coordinates")
    scaled = joints / np.array([w, h])
    return scaled.reshape(*joints.shape[:-2], SKELETON_DIM)


def encode_position(center, scene_extent: tuple[float, float], normalized: bool = True) -> np.ndarray:
    """Sinusoidal 32-dim encoding of a 2D center (or batch shaped (..., 2)).

    Per axis: 8 geometric frequencies 10000^(-k/8), interleaved sine/cosine,
    x dims first then y. ``normalized=False`` feeds raw pixel coordinates to
    the sinusoids instead of extent-normalized ones.
    """
    w, h = float(scene_extent[0]), float(scene_extent[1])
    if w <= 0 or h <= 0:
        raise ValidationError(f"scene extent must be positive, got {scene_extent}")
    c = np.asarray(center, dtype=np.float64)
    if c.shape[-1] != 2:
        raise ValidationError(f"expected (..., 2) centers, got {c.shape}")
    if not np.isfinite(c).all():
        raise ValidationError("non-finite center coordinates")
    if normalized:
        c = c / np.array([w, h])
    ang = c[..., :, None] * _FREQS  # (..., 2, n_freqs)
    enc = np.empty(c.shape[:-1] + (2, 2 * _N_FREQS))
    enc[..., 0::2] = np.sin(ang)
    enc[..., 1::2] = np.cos(ang)
    return enc.reshape(*c.shape[:-1], POSITION_DIM)


def encode_positions_masked(centers: np.ndarray, presence: np.ndarray, scene_extent, normalized: bool = True) -> np.ndarray:
    """Positional encodings for (T, N, 2) centers with absent rows forced to zero."""
    p = encode_position(centers, scene_extent, normalized=normalized)
    p[~presence] = 0.0
    return p


def assemble_feature_block(clip: SceneClip, normalized: bool = True) -> FeatureBlock:
    """Build V = [K | P] for a clip; absent subjects are all-zero."""
    k = normalize_skeleton(clip.joints, clip.scene_extent) if normalized else clip.joints.reshape(
        clip.n_frames, clip.n_slots, SKELETON_DIM
    ).copy()
    k[~clip.presence] = 0.0
    p = encode_positions_masked(clip.centers, clip.presence, clip.scene_extent, normalized=normalized)
    v = np.concatenate([k, p], axis=-1)
    return FeatureBlock(V=v, K=k, P=p, presence=clip.presence.copy())


def pairwise_distances(centers: np.ndarray, presence: np.ndarray, diagonal: float) -> np.ndarray:
    """(T, N, N) distances in diagonal units: clipped to 1, absent pairs 1, diagonal 0."""
    diff = centers[:, :, None, :] - centers[:, None, :, :]
    d = np.minimum(np.linalg.norm(diff, axis=-1) / diagonal, 1.0)
    absent = ~presence
    d[absent[:, :, None] | absent[:, None, :]] = 1.0
    idx = np.arange(centers.shape[1])
    d[:, idx, idx] = 0.0
    return d


def pairwise_distance_channel(clip: SceneClip) -> DistanceChannel:
    return DistanceChannel(pairwise_distances(clip.centers, clip.presence, clip.diagonal))
