"""Shared social relation embedding network.

Maps the per-subject feature block V = [K | P] to an embedding E of shape
(T, N, embed_dim). The skeleton half runs through a joint-graph convolution
branch with temporal convolutions (no cross-subject mixing); the result is
concatenated with the positional encoding and passed through spatio-temporal
graph convolution layers over a per-frame radius graph on subject centers.

Absent subjects are masked to zero after every layer so zero-fill padding
never leaks into present subjects, and graph message passing keeps strict
locality: a subject's embedding depends only on subjects within
``stgc_layers`` adjacency hops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, StateError, ValidationError
from .features import FEATURE_DIM, FeatureBlock, POSITION_DIM, SKELETON_DIM
from .scene import N_JOINTS, SceneClip

# bone list over the 16-joint template (MPII order, see synth)
SKELETON_EDGES = (
    (0, 1), (1, 2), (2, 6), (3, 6), (3, 4), (4, 5),
    (6, 7), (7, 8), (8, 9),
    (10, 11), (11, 12), (12, 7), (13, 7), (13, 14), (14, 15),
)


@dataclass(frozen=True)
class EmbeddingConfig:
    embed_dim: int = 64
    skeleton_branch_layers: int = 2
    skeleton_hidden: int = 16
    skeleton_out_dim: int = 32
    stgc_layers: int = 2
    neighbor_radius: float = 0.15  # fraction of the scene diagonal
    temporal_kernel: int = 3

    def validate(self) -> "EmbeddingConfig":
        if self.embed_dim <= 0 or self.skeleton_out_dim <= 0 or self.skeleton_hidden <= 0:
            raise ValidationError("embedding widths must be positive")
        if self.skeleton_branch_layers < 1 or self.stgc_layers < 1:
            raise ValidationError("layer counts must be >= 1")
        if not 0.0 < self.neighbor_radius <= 1.0:
            raise ValidationError(f"neighbor_radius must be in (0, 1], got {self.neighbor_radius}")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ValidationError(f"temporal_kernel must be odd and positive, got {self.temporal_kernel}")
        return self


def joint_adjacency() -> torch.Tensor:
    """Symmetric-normalized (16, 16) joint graph with self-loops."""
    a = torch.eye(N_JOINTS, dtype=torch.float64)
    for i, j in SKELETON_EDGES:
        a[i, j] = 1.0
        a[j, i] = 1.0
    d = a.sum(dim=1).rsqrt()
    return d[:, None] * a * d[None, :]


def subject_adjacency(centers: np.ndarray, presence: np.ndarray, diagonal: float, neighbor_radius: float) -> np.ndarray:
    """(T, N, N) binary radius graph on centers; absent subjects are isolated, no self-loops."""
    diff = centers[:, :, None, :] - centers[:, None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    adj = (dist < neighbor_radius * diagonal).astype(np.float64)
    absent = ~presence
    adj[absent[:, :, None] | absent[:, None, :]] = 0.0
    idx = np.arange(centers.shape[1])
    adj[:, idx, idx] = 0.0
    return adj


def normalized_adjacency(adj: torch.Tensor, presence: torch.Tensor) -> torch.Tensor:
    """D^-1/2 (A + I_present) D^-1/2 per frame; rows of absent subjects stay zero."""
    a = adj + torch.diag_embed(presence.to(adj.dtype))
    deg = a.sum(dim=-1)
    dinv = torch.where(deg > 0, deg.rsqrt(), torch.zeros_like(deg))
    return dinv[:, :, None] * a * dinv[:, None, :]


def _check_temporal(t_frames: int, kernel: int) -> None:
    if t_frames < kernel:
        raise ConfigurationError(f"clip has {t_frames} frames but the temporal kernel needs >= {kernel}")


def _mask_rows(x: torch.Tensor, presence: torch.Tensor | None) -> torch.Tensor:
    if presence is None:
        return x
    return x * presence.to(x.dtype)[..., None]


class JointGraphBlock(nn.Module):
    """Joint-graph convolution plus temporal convolution on (N, C, T, J) tensors."""

    def __init__(self, in_channels: int, out_channels: int, temporal_kernel: int, bias: bool = True):
        super().__init__()
        self.point = nn.Conv2d(in_channels, out_channels, kernel_size=1, bias=bias)
        pad = (temporal_kernel - 1) // 2
        self.temporal = nn.Conv2d(out_channels, out_channels, kernel_size=(temporal_kernel, 1), padding=(pad, 0), bias=bias)
        self.register_buffer("adj", joint_adjacency().to(torch.get_default_dtype()), persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = torch.einsum("nctj,jk->nctk", x, self.adj.to(x.dtype))
        x = torch.nn.functional.gelu(self.point(x))
        x = torch.nn.functional.gelu(self.temporal(x))
        return x


class SkeletonBranch(nn.Module):
    """Per-subject temporal action features from normalized joint coordinates."""

    def __init__(self, cfg: EmbeddingConfig, bias: bool = True):
        super().__init__()
        self.cfg = cfg
        blocks = []
        in_c = 2
        for _ in range(cfg.skeleton_branch_layers):
            blocks.append(JointGraphBlock(in_c, cfg.skeleton_hidden, cfg.temporal_kernel, bias=bias))
            in_c = cfg.skeleton_hidden
        self.blocks = nn.ModuleList(blocks)
        self.out = nn.Linear(cfg.skeleton_hidden, cfg.skeleton_out_dim, bias=bias)

    def forward(self, k: torch.Tensor, presence: torch.Tensor | None = None) -> torch.Tensor:
        """(T, N, 32) joint features -> (T, N, skeleton_out_dim)."""
        t, n, _ = k.shape
        _check_temporal(t, self.cfg.temporal_kernel)
        x = k.reshape(t, n, N_JOINTS, 2).permute(1, 3, 0, 2)  # (N, 2, T, J)
        mask = None
        if presence is not None:
            mask = presence.to(k.dtype).permute(1, 0)[:, None, :, None]  # (N, 1, T, 1)
        for block in self.blocks:
            x = block(x)
            if mask is not None:
                x = x * mask
        x = x.mean(dim=3)  # pool joints -> (N, C, T)
        x = self.out(x.permute(2, 0, 1))  # (T, N, C_out)
        return _mask_rows(x, presence)


class SpatioTemporalGraphConv(nn.Module):
    """Message passing over the per-frame subject graph with temporal convolutions."""

    def __init__(self, in_dim: int, cfg: EmbeddingConfig, bias: bool = True):
        super().__init__()
        self.cfg = cfg
        pad = (cfg.temporal_kernel - 1) // 2
        dims = [in_dim] + [cfg.embed_dim] * cfg.stgc_layers
        self.spatial = nn.ModuleList(nn.Linear(dims[i], dims[i + 1], bias=bias) for i in range(cfg.stgc_layers))
        self.temporal = nn.ModuleList(
            nn.Conv1d(cfg.embed_dim, cfg.embed_dim, cfg.temporal_kernel, padding=pad, bias=bias)
            for _ in range(cfg.stgc_layers)
        )

    def forward(self, h: torch.Tensor, adj: torch.Tensor, presence: torch.Tensor | None = None) -> torch.Tensor:
        """(T, N, C_in) -> (T, N, embed_dim) under the (T, N, N) adjacency.

        Layers are residual whenever widths line up, so per-subject input
        channels survive into the embedding alongside the mixed-in context.
        """
        t = h.shape[0]
        _check_temporal(t, self.cfg.temporal_kernel)
        pres = presence if presence is not None else torch.ones(h.shape[:2], dtype=torch.bool, device=h.device)
        ahat = normalized_adjacency(adj.to(h.dtype), pres)
        x = h
        for spatial, temporal in zip(self.spatial, self.temporal):
            y = torch.bmm(ahat, x)
            y = torch.nn.functional.gelu(spatial(y))
            y = _mask_rows(y, presence)
            y = torch.nn.functional.gelu(temporal(y.permute(1, 2, 0)).permute(2, 0, 1))
            y = _mask_rows(y, presence)
            x = x + y if x.shape[-1] == y.shape[-1] else y
        return x


class RelationEmbeddingNet(nn.Module):
    """The shared embedding network: V = [K | P] -> E."""

    def __init__(self, cfg: EmbeddingConfig | None = None, bias: bool = True):
        super().__init__()
        self.cfg = (cfg or EmbeddingConfig()).validate()
        self.skeleton = SkeletonBranch(self.cfg, bias=bias)
        self.stgc = SpatioTemporalGraphConv(self.cfg.skeleton_out_dim + POSITION_DIM, self.cfg, bias=bias)

    def forward(self, v: torch.Tensor, adj: torch.Tensor, presence: torch.Tensor | None = None) -> torch.Tensor:
        if v.shape[-1] != FEATURE_DIM:
            raise ValidationError(f"expected feature dim {FEATURE_DIM}, got {v.shape[-1]}")
        k, p = v[..., :SKELETON_DIM], v[..., SKELETON_DIM:]
        b = self.skeleton(k, presence)
        return self.stgc(torch.cat([b, p], dim=-1), adj, presence)


def init_parameters(module: nn.Module, seed: int) -> None:
    """Deterministic parameter init from an explicit generator (global RNG untouched).

    Weights are uniform in +-1/sqrt(fan_in); biases are zero. Parameters are
    visited in sorted name order so the layout is stable across runs.
    """
    gen = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFF)
    for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        with torch.no_grad():
            if p.dim() <= 1 or "bias" in name:
                p.zero_()
            else:
                fan_in = math.prod(p.shape[1:])
                bound = 1.0 / math.sqrt(fan_in)
                p.uniform_(-bound, bound, generator=gen)


def clip_geometry(clip: SceneClip, cfg: EmbeddingConfig, centers: np.ndarray | None = None) -> np.ndarray:
    """Radius-graph adjacency for a clip, optionally from overridden centers."""
    c = clip.centers if centers is None else centers
    return subject_adjacency(c, clip.presence, clip.diagonal, cfg.neighbor_radius)


def embed(net: RelationEmbeddingNet, block: FeatureBlock, clip: SceneClip, centers: np.ndarray | None = None) -> np.ndarray:
    """Run the embedding network on a feature block; returns (T, N, embed_dim)."""
    if net is None:
        raise StateError("embedding network is not initialized")
    adj = clip_geometry(clip, net.cfg, centers)
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        e = net(
            torch.from_numpy(block.V).to(dtype),
            torch.from_numpy(adj).to(dtype),
            torch.from_numpy(block.presence.copy()),
        )
    return e.numpy()
