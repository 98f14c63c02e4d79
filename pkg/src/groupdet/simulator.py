"""Self-supervised pretraining: position swaps and the recovery head.

The pretext corruption exchanges the center positions of a randomly selected
subset of subjects (a derangement, so nobody keeps their spot), perturbs the
swapped positions with small uniform noise, and recomputes the positional
encodings. Skeleton features are left untouched. A convolutional decoder is
then trained, together with the shared embedding network, to reproduce the
original positional features from the corrupted block under an MSE loss.

Nothing in this module reads ground-truth group labels: training consumes
``Stage1Example`` views that carry geometry and features only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .embedding import EmbeddingConfig, RelationEmbeddingNet, init_parameters, subject_adjacency
from .errors import ConfigurationError, TrainingError, ValidationError
from .features import POSITION_DIM, assemble_feature_block, encode_positions_masked
from .scene import SceneClip
from .utils import derive_seed, single_thread, to_tensor

_STREAM_SELECT = 11
_STREAM_NOISE = 13
_STREAM_ORDER = 17
_STREAM_EPOCH = 19


@dataclass(frozen=True)
class SwapSpec:
    """A position-exchange plan over subject slots.

    ``selected[k]`` receives the original center of ``source[k]``; the mapping
    restricted to the selected set is a derangement. ``degenerate`` marks the
    case where a swap was requested but fewer than two subjects qualified.
    """

    selected: np.ndarray
    source: np.ndarray
    ratio: float
    noise_eps: float = 0.01
    seed: int = 0
    degenerate: bool = False

    def __post_init__(self):
        sel = np.asarray(self.selected, dtype=int)
        src = np.asarray(self.source, dtype=int)
        object.__setattr__(self, "selected", sel)
        object.__setattr__(self, "source", src)
        if sel.shape != src.shape:
            raise ValidationError("selected and source must have equal length")
        if sel.size and (np.any(sel == src) or len(set(sel.tolist())) != sel.size or set(sel.tolist()) != set(src.tolist())):
            raise ValidationError("swap mapping must be a derangement of the selected set")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValidationError(f"ratio must be in [0, 1], got {self.ratio}")

    @property
    def is_identity(self) -> bool:
        return self.selected.size == 0

    def inverse(self) -> "SwapSpec":
        order = np.argsort(self.source)
        return replace(self, selected=self.source[order], source=self.selected[order])


def select_swap_set(present, ratio: float, seed: int = 0, noise_eps: float = 0.01) -> SwapSpec:
    """Pick round(ratio * n_present) subjects and a uniform random derangement of them.

    ``present`` is either the count of present subjects (slots 0..n-1) or an
    array of present slot indices. Fewer than two selectable subjects yields
    an identity spec flagged as degenerate.
    """
    if isinstance(present, (int, np.integer)):
        pool = np.arange(int(present))
    else:
        pool = np.asarray(present, dtype=int)
    if pool.size and pool.min() < 0:
        raise ValidationError("present indices must be nonnegative")
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError(f"ratio must be in [0, 1], got {ratio}")
    k = int(round(ratio * pool.size))
    empty = np.array([], dtype=int)
    if k < 2:
        return SwapSpec(empty, empty, ratio, noise_eps, seed, degenerate=ratio > 0.0 and pool.size > 0)
    rng = np.random.default_rng(derive_seed(seed, _STREAM_SELECT))
    chosen = np.sort(rng.choice(pool, size=k, replace=False))
    while True:
        perm = rng.permutation(k)
        if not np.any(perm == np.arange(k)):
            break
    return SwapSpec(chosen, chosen[perm], ratio, noise_eps, seed)


def apply_swap(centers: np.ndarray, spec: SwapSpec, diagonal: float) -> np.ndarray:
    """Exchange selected subjects' centers across all frames, plus uniform noise.

    centers: (T, N, 2). Swapped positions get independent per-frame noise in
    +-noise_eps * diagonal per coordinate; everything else is untouched.
    """
    if not np.isfinite(centers).all():
        raise ValidationError("non-finite centers")
    new = np.array(centers, dtype=np.float64, copy=True)
    if spec.is_identity:
        return new
    if spec.selected.max() >= centers.shape[1]:
        raise ValidationError("swap spec references a subject outside the clip")
    new[:, spec.selected] = centers[:, spec.source]
    if spec.noise_eps > 0:
        rng = np.random.default_rng(derive_seed(spec.seed, _STREAM_NOISE))
        noise = rng.uniform(-1.0, 1.0, (centers.shape[0], spec.selected.size, 2))
        new[:, spec.selected] += noise * (spec.noise_eps * diagonal)
    return new


@dataclass(frozen=True)
class NeighborCluster:
    """A center subject paired with its within-radius neighbors and their features."""

    center: int
    neighbors: tuple[int, ...]
    features: tuple[np.ndarray, np.ndarray]  # (V_center (T, C), V_neighbors (T, k, C))


def neighbor_cluster(clip: SceneClip, center: int, radius: float, frame: int = 0) -> NeighborCluster:
    """Neighbors of ``center`` at ``frame``: present subjects closer than radius * diagonal."""
    if not 0 <= frame < clip.n_frames:
        raise ValidationError(f"frame {frame} out of range")
    if not 0 <= center < clip.n_slots or not clip.presence[frame, center]:
        raise ValidationError(f"center subject {center} is absent at frame {frame}")
    pos = clip.centers[frame]
    dist = np.linalg.norm(pos - pos[center], axis=-1)
    close = dist < radius * clip.diagonal
    close[center] = False
    close &= clip.presence[frame]
    neighbors = tuple(int(i) for i in np.flatnonzero(close))
    v = assemble_feature_block(clip).V
    return NeighborCluster(center, neighbors, (v[:, center, :], v[:, list(neighbors), :]))


class RecoveryHead(nn.Module):
    """Convolutional decoder from embeddings back to positional features.

    Follows the time-extrapolation convolution idiom: frames act as channels
    and kernels slide along the feature axis only, so subjects never mix here
    (their context already lives in the embedding).
    """

    def __init__(self, frame_count: int, embed_dim: int = 64, out_dim: int = POSITION_DIM, conv_layers: int = 2):
        super().__init__()
        if frame_count < 1:
            raise ConfigurationError("frame_count must be >= 1")
        self.frame_count = frame_count
        self.convs = nn.ModuleList(
            nn.Conv2d(frame_count, frame_count, kernel_size=(1, 3), padding=(0, 1)) for _ in range(conv_layers)
        )
        self.out = nn.Linear(embed_dim, out_dim)

    def forward(self, e: torch.Tensor, presence: torch.Tensor | None = None) -> torch.Tensor:
        if e.shape[0] != self.frame_count:
            raise ConfigurationError(f"recovery head was built for {self.frame_count} frames, got {e.shape[0]}")
        x = e[None]  # (1, T, N, C)
        for conv in self.convs:
            x = x + torch.nn.functional.gelu(conv(x))
        x = self.out(x[0])
        if presence is not None:
            x = x * presence.to(x.dtype)[..., None]
        return x


@dataclass(frozen=True)
class Stage1Config:
    epochs: int = 200
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    swap_ratio: float = 0.10
    noise_eps: float = 0.01
    swapped_only_loss: bool = False
    batch_clips: int = 1
    seed: int = 0

    def validate(self) -> "Stage1Config":
        if self.epochs <= 0 or self.learning_rate <= 0:
            raise ValidationError("epochs and learning_rate must be positive")
        if self.optimizer != "adam":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer!r}")
        if not 0.0 <= self.swap_ratio <= 1.0:
            raise ValidationError("swap_ratio must be in [0, 1]")
        if self.noise_eps < 0:
            raise ValidationError("noise_eps must be >= 0")
        if self.batch_clips < 1:
            raise ValidationError("batch_clips must be >= 1")
        return self


@dataclass(frozen=True)
class Stage1Example:
    """Label-free view of a clip used by pretraining code paths."""

    clip_id: str
    k_feat: np.ndarray  # (T, N, 32)
    p_feat: np.ndarray  # (T, N, 32)
    centers: np.ndarray  # (T, N, 2)
    presence: np.ndarray  # (T, N)
    scene_extent: tuple[float, float]
    diagonal: float
    normalized: bool

    @property
    def swap_pool(self) -> np.ndarray:
        return np.flatnonzero(self.presence.all(axis=0))


def stage1_examples(clips: Sequence[SceneClip], normalized: bool = True) -> list[Stage1Example]:
    out = []
    for clip in clips:
        block = assemble_feature_block(clip, normalized=normalized)
        out.append(
            Stage1Example(
                clip_id=clip.clip_id,
                k_feat=block.K,
                p_feat=block.P,
                centers=np.array(clip.centers),
                presence=np.array(clip.presence),
                scene_extent=clip.scene_extent,
                diagonal=clip.diagonal,
                normalized=normalized,
            )
        )
    return out


def corrupt_example(ex: Stage1Example, spec: SwapSpec):
    """Apply the swap to an example; returns (V_tilde, swapped_centers)."""
    new_centers = apply_swap(ex.centers, spec, ex.diagonal)
    p_tilde = encode_positions_masked(new_centers, ex.presence, ex.scene_extent, normalized=ex.normalized)
    v_tilde = np.concatenate([ex.k_feat, p_tilde], axis=-1)
    return v_tilde, new_centers


def _loss_mask(ex: Stage1Example, spec: SwapSpec, swapped_only: bool) -> np.ndarray:
    mask = np.array(ex.presence, dtype=bool)
    if swapped_only:
        keep = np.zeros(ex.presence.shape[1], dtype=bool)
        keep[spec.selected] = True
        mask &= keep[None, :]
    return mask


def _masked_mse(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    m = mask.to(pred.dtype)[..., None]
    denom = m.sum() * pred.shape[-1]
    if denom.item() == 0:
        return pred.sum() * 0.0
    return ((pred - target) ** 2 * m).sum() / denom


@dataclass
class Stage1Result:
    phi: RelationEmbeddingNet
    head: RecoveryHead
    trace: list[dict]
    config: Stage1Config
    embedding_config: EmbeddingConfig


def _forward_recovery(phi, head, ex: Stage1Example, spec: SwapSpec, dtype) -> tuple[torch.Tensor, torch.Tensor]:
    v_tilde, new_centers = corrupt_example(ex, spec)
    adj = subject_adjacency(new_centers, ex.presence, ex.diagonal, phi.cfg.neighbor_radius)
    presence_t = torch.from_numpy(ex.presence)
    e = phi(to_tensor(v_tilde, dtype), to_tensor(adj, dtype), presence_t)
    return head(e, presence_t), presence_t


def train_stage1(
    clips: Sequence[SceneClip],
    embedding_cfg: EmbeddingConfig | None = None,
    cfg: Stage1Config | None = None,
) -> Stage1Result:
    """Train the embedding network and recovery head on the swap pretext task.

    The swap is resampled every epoch from seeds derived from the run seed.
    Runs single-threaded so identical configs reproduce identical parameters.
    """
    cfg = (cfg or Stage1Config()).validate()
    embedding_cfg = (embedding_cfg or EmbeddingConfig()).validate()
    if not clips:
        raise ConfigurationError("stage-1 training needs a nonempty dataset")
    single_thread()
    examples = stage1_examples(clips)
    frame_count = examples[0].presence.shape[0]
    for ex in examples:
        if ex.presence.shape[0] != frame_count:
            raise ConfigurationError("all clips must share the same frame count for the recovery head")

    phi = RelationEmbeddingNet(embedding_cfg)
    head = RecoveryHead(frame_count, embedding_cfg.embed_dim)
    init_parameters(phi, derive_seed(cfg.seed, 1))
    init_parameters(head, derive_seed(cfg.seed, 2))
    dtype = torch.get_default_dtype()
    params = list(phi.parameters()) + list(head.parameters())
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)

    order_rng = np.random.default_rng(derive_seed(cfg.seed, _STREAM_ORDER))
    targets = [to_tensor(ex.p_feat, dtype) for ex in examples]
    trace: list[dict] = []
    start = time.monotonic()
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(examples))
        epoch_loss = 0.0
        opt.zero_grad()
        pending = 0
        for pos, idx in enumerate(order):
            ex = examples[idx]
            spec = select_swap_set(
                ex.swap_pool,
                cfg.swap_ratio,
                seed=derive_seed(cfg.seed, _STREAM_EPOCH, epoch, int(idx)),
                noise_eps=cfg.noise_eps,
            )
            pred, presence_t = _forward_recovery(phi, head, ex, spec, dtype)
            mask = torch.from_numpy(_loss_mask(ex, spec, cfg.swapped_only_loss))
            loss = _masked_mse(pred, targets[idx], mask)
            (loss / cfg.batch_clips).backward()
            pending += 1
            if pending == cfg.batch_clips or pos == len(order) - 1:
                opt.step()
                opt.zero_grad()
                pending = 0
            epoch_loss += float(loss.detach())
        epoch_loss /= len(examples)
        if not np.isfinite(epoch_loss):
            raise TrainingError("pretraining loss is not finite", epoch=epoch)
        trace.append(
            {
                "epoch": epoch,
                "loss": epoch_loss,
                "lr": cfg.learning_rate,
                "wallclock_s": time.monotonic() - start,
            }
        )
    return Stage1Result(phi=phi, head=head, trace=trace, config=cfg, embedding_config=embedding_cfg)


def recovery_mse(
    phi: RelationEmbeddingNet,
    head: RecoveryHead,
    clips: Sequence[SceneClip],
    ratio: float,
    noise_eps: float = 0.01,
    seed: int = 0,
    swapped_only: bool = False,
) -> tuple[float, float]:
    """Mean recovery MSE over clips, next to the leave-swapped-unchanged baseline.

    The baseline scores the corrupted positional features themselves against
    the originals, which follows directly from the swap spec.
    """
    single_thread()
    examples = stage1_examples(clips)
    dtype = next(phi.parameters()).dtype
    model_total, base_total = [], []
    with torch.no_grad():
        for idx, ex in enumerate(examples):
            spec = select_swap_set(ex.swap_pool, ratio, seed=derive_seed(seed, _STREAM_EPOCH, idx), noise_eps=noise_eps)
            v_tilde, _ = corrupt_example(ex, spec)
            pred, _ = _forward_recovery(phi, head, ex, spec, dtype)
            mask = torch.from_numpy(_loss_mask(ex, spec, swapped_only))
            target = to_tensor(ex.p_feat, dtype)
            model_total.append(float(_masked_mse(pred, target, mask)))
            p_tilde = to_tensor(v_tilde[..., -POSITION_DIM:], dtype)
            base_total.append(float(_masked_mse(p_tilde, target, mask)))
    return float(np.mean(model_total)), float(np.mean(base_total))
