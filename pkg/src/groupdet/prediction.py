"""Supervised group prediction head and its training loop.

Per frame, M independent scaled bilinear attention maps score every subject
pair from the shared embedding; the maps are stacked with a distance channel
into a (T, N, N, M+1) relation block. Each pair's length-T channel sequence
runs through a single-layer GRU and an affine layer with logistic squashing,
giving per-frame pair scores in [0, 1] that are symmetrized and masked.

Training minimizes a cosine-similarity loss between the flattened predicted
and ground-truth relation matrices, optionally fine-tuning the embedding
network initialized from a pretraining checkpoint.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .embedding import EmbeddingConfig, RelationEmbeddingNet, init_parameters, subject_adjacency
from .errors import ConfigurationError, TrainingError, ValidationError
from .features import assemble_feature_block, pairwise_distances
from .scene import SceneClip, relation_tensor_from_clip
from .utils import derive_seed, single_thread, to_tensor

_STREAM_ORDER = 29
_STREAM_LABELS = 31


@dataclass(frozen=True)
class StackAttConfig:
    num_maps: int = 8  # independent attention maps stacked as channels
    proj_len: int = 32  # length of the projected vectors the maps compare
    gru_hidden: int = 32
    shared_projection: bool = True  # one projection for both pair members (symmetric maps)

    def validate(self) -> "StackAttConfig":
        if self.num_maps < 1 or self.proj_len < 1 or self.gru_hidden < 1:
            raise ValidationError("attention config values must be >= 1")
        return self


class StackedAttention(nn.Module):
    """M scaled bilinear attention maps over subject embedding pairs.

    Builds (T, N, N, M) without ever materializing concatenated pair
    features: projections are (T, N, M, L) and the maps come from one einsum.
    """

    def __init__(self, embed_dim: int, cfg: StackAttConfig):
        super().__init__()
        self.cfg = cfg.validate()
        self.embed_dim = embed_dim
        self.weight = nn.Parameter(torch.empty(cfg.num_maps, cfg.proj_len, embed_dim))
        self.bias = nn.Parameter(torch.empty(cfg.num_maps, cfg.proj_len))
        if not cfg.shared_projection:
            self.weight_k = nn.Parameter(torch.empty(cfg.num_maps, cfg.proj_len, embed_dim))
            self.bias_k = nn.Parameter(torch.empty(cfg.num_maps, cfg.proj_len))

    def project(self, e: torch.Tensor, second: bool = False) -> torch.Tensor:
        w = self.weight_k if second and not self.cfg.shared_projection else self.weight
        b = self.bias_k if second and not self.cfg.shared_projection else self.bias
        return torch.einsum("mlc,tnc->tnml", w, e) + b

    def forward(self, e: torch.Tensor, presence: torch.Tensor | None = None) -> torch.Tensor:
        theta_i = self.project(e)
        theta_j = self.project(e, second=True)
        u = torch.einsum("timl,tjml->tijm", theta_i, theta_j) / math.sqrt(self.cfg.proj_len)
        if presence is not None:
            pair = presence[:, :, None] & presence[:, None, :]
            u = u * pair.to(u.dtype)[..., None]
        return u


def attention_score(att: StackedAttention, head: int, e_i, e_j) -> float:
    """One map's score for a single embedding pair: proj(e_i) . proj(e_j) / sqrt(L)."""
    if not 0 <= head < att.cfg.num_maps:
        raise ValidationError(f"head {head} out of range")
    dtype = att.weight.dtype
    ei = torch.atleast_2d(torch.as_tensor(e_i, dtype=dtype))[None]
    ej = torch.atleast_2d(torch.as_tensor(e_j, dtype=dtype))[None]
    with torch.no_grad():
        ti = att.project(ei)[0, 0, head]
        tj = att.project(ej, second=True)[0, 0, head]
        return float(ti @ tj / math.sqrt(att.cfg.proj_len))


def append_distance(u: torch.Tensor, d: torch.Tensor) -> torch.Tensor:
    """Stack the distance channel after the attention maps: (T, N, N, M) -> (T, N, N, M+1)."""
    if u.shape[:3] != d.shape:
        raise ValidationError(f"attention block {tuple(u.shape)} and distance channel {tuple(d.shape)} disagree")
    return torch.cat([u, d.to(u.dtype)[..., None]], dim=-1)


class PairRecurrentScorer(nn.Module):
    """Single-layer GRU over each pair's channel sequence, then affine + logistic."""

    def __init__(self, in_channels: int, hidden: int):
        super().__init__()
        self.gru = nn.GRU(in_channels, hidden, num_layers=1, batch_first=True)
        self.out = nn.Linear(hidden, 1)

    def forward(self, u_d: torch.Tensor, presence: torch.Tensor | None = None) -> torch.Tensor:
        t, n, _, c = u_d.shape
        seq = u_d.permute(1, 2, 0, 3).reshape(n * n, t, c)
        h, _ = self.gru(seq)
        scores = torch.sigmoid(self.out(h)).reshape(n, n, t).permute(2, 0, 1)
        scores = 0.5 * (scores + scores.transpose(1, 2))
        eye = torch.eye(n, dtype=torch.bool, device=u_d.device)
        scores = scores.masked_fill(eye, 0.0)
        if presence is not None:
            pair = presence[:, :, None] & presence[:, None, :]
            scores = scores * pair.to(scores.dtype)
        return scores


class GroupPredictionHead(nn.Module):
    """Stacked attention + distance channel + recurrent pair scorer."""

    def __init__(self, embed_dim: int, cfg: StackAttConfig):
        super().__init__()
        self.attention = StackedAttention(embed_dim, cfg)
        self.scorer = PairRecurrentScorer(cfg.num_maps + 1, cfg.gru_hidden)

    def forward(self, e: torch.Tensor, d: torch.Tensor, presence: torch.Tensor | None = None) -> torch.Tensor:
        u = self.attention(e, presence)
        return self.scorer(append_distance(u, d), presence)


def predict_relations(head: GroupPredictionHead | PairRecurrentScorer, u_d: torch.Tensor, presence: torch.Tensor | None = None) -> torch.Tensor:
    """Score a prepared (T, N, N, M+1) relation block into (T, N, N) pair scores."""
    scorer = head.scorer if isinstance(head, GroupPredictionHead) else head
    return scorer(u_d, presence)


class Stage2Model(nn.Module):
    """Embedding network plus group prediction head; the full inference path."""

    def __init__(self, embedding_cfg: EmbeddingConfig, att_cfg: StackAttConfig):
        super().__init__()
        self.phi = RelationEmbeddingNet(embedding_cfg)
        self.head = GroupPredictionHead(embedding_cfg.embed_dim, att_cfg)

    def forward(self, v: torch.Tensor, adj: torch.Tensor, d: torch.Tensor, presence: torch.Tensor | None = None) -> torch.Tensor:
        e = self.phi(v, adj, presence)
        return self.head(e, d, presence)


def cosine_relation_loss(pred: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """1 - cosine similarity between masked, flattened relation matrices.

    All-zero ground truth has no direction to compare against, so those clips
    contribute a mean squared-magnitude penalty on the prediction instead.
    """
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ValidationError("prediction, ground truth and mask shapes must agree")
    m = mask.to(pred.dtype)
    v1 = (pred * m).reshape(-1)
    v2 = (gt * m).reshape(-1)
    n2 = torch.linalg.vector_norm(v2)
    if float(n2.detach()) == 0.0:
        count = m.sum()
        if float(count) == 0.0:
            return pred.sum() * 0.0
        return v1.square().sum() / count
    n1 = torch.linalg.vector_norm(v1)
    if float(n1.detach()) == 0.0:
        return v1.sum() * 0.0 + 1.0
    return 1.0 - (v1 @ v2) / (n1 * n2)


@dataclass(frozen=True)
class Stage2Config:
    epochs: int = 100
    learning_rate: float = 7e-3
    optimizer: str = "adam"
    fine_tune_phi: bool = True
    label_fraction: float = 1.0
    batch_clips: int = 4  # gradients averaged over this many clips per step
    grad_clip_norm: float = 1.0  # the cosine loss rewards saturated scores; clipping keeps gradients alive
    seed: int = 0

    def validate(self) -> "Stage2Config":
        if self.epochs <= 0 or self.learning_rate <= 0:
            raise ValidationError("epochs and learning_rate must be positive")
        if self.optimizer != "adam":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer!r}")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ValidationError(f"label_fraction must be in (0, 1], got {self.label_fraction}")
        if self.batch_clips < 1:
            raise ValidationError("batch_clips must be >= 1")
        if self.grad_clip_norm <= 0:
            raise ValidationError("grad_clip_norm must be positive")
        return self


def labeled_subset(n_clips: int, fraction: float, seed: int) -> np.ndarray:
    """Deterministic, nested subsets: the subset at f contains the subset at f' < f."""
    order = np.random.default_rng(derive_seed(seed, _STREAM_LABELS)).permutation(n_clips)
    k = int(round(fraction * n_clips))
    if k < 1:
        raise ConfigurationError(f"label fraction {fraction} selects no clips out of {n_clips}")
    return np.sort(order[:k])


@dataclass
class ClipTensors:
    """Feature/geometry tensors cached once per clip for the stage-2 loop."""

    v: torch.Tensor
    adj: torch.Tensor
    dist: torch.Tensor
    presence: torch.Tensor
    gt: torch.Tensor
    mask: torch.Tensor


def prepare_clip_tensors(clip: SceneClip, embedding_cfg: EmbeddingConfig, dtype, normalized: bool = True, need_gt: bool = True) -> ClipTensors:
    block = assemble_feature_block(clip, normalized=normalized)
    adj = subject_adjacency(clip.centers, clip.presence, clip.diagonal, embedding_cfg.neighbor_radius)
    dist = pairwise_distances(clip.centers, clip.presence, clip.diagonal)
    presence = torch.from_numpy(np.array(clip.presence))
    pair = presence[:, :, None] & presence[:, None, :]
    eye = torch.eye(clip.n_slots, dtype=torch.bool)
    mask = pair & ~eye
    if need_gt:
        gt = to_tensor(relation_tensor_from_clip(clip), dtype)
    else:
        gt = torch.zeros(mask.shape, dtype=dtype)
    return ClipTensors(
        v=to_tensor(block.V, dtype),
        adj=to_tensor(adj, dtype),
        dist=to_tensor(dist, dtype),
        presence=presence,
        gt=gt,
        mask=mask,
    )


@dataclass
class Stage2Result:
    model: Stage2Model
    trace: list[dict]
    config: Stage2Config
    embedding_config: EmbeddingConfig
    attention_config: StackAttConfig
    label_indices: list[int]


def train_stage2(
    clips: Sequence[SceneClip],
    stage1_params: dict[str, np.ndarray] | None,
    embedding_cfg: EmbeddingConfig | None = None,
    att_cfg: StackAttConfig | None = None,
    cfg: Stage2Config | None = None,
    normalized: bool = True,
    validation: Sequence[SceneClip] | None = None,
    validation_fn=None,
) -> Stage2Result:
    """Train the prediction head (and optionally fine-tune the embedding).

    ``stage1_params`` are pretrained embedding parameters (numpy state dict
    entries prefixed ``phi.``); None means random initialization, the
    no-pretraining ablation. With ``fine_tune_phi=False`` the embedding
    parameters are frozen and come out bit-identical.
    """
    cfg = (cfg or Stage2Config()).validate()
    embedding_cfg = (embedding_cfg or EmbeddingConfig()).validate()
    att_cfg = (att_cfg or StackAttConfig()).validate()
    if not clips:
        raise ConfigurationError("stage-2 training needs a nonempty dataset")
    single_thread()
    chosen = labeled_subset(len(clips), cfg.label_fraction, cfg.seed)
    for idx in chosen:
        if clips[idx].gt_partition is None:
            raise ConfigurationError(f"clip {clips[idx].clip_id} in the labeled subset has no labels")

    model = Stage2Model(embedding_cfg, att_cfg)
    init_parameters(model, derive_seed(cfg.seed, 4))
    dtype = torch.get_default_dtype()
    if stage1_params is not None:
        phi_state = {
            name[len("phi."):]: torch.from_numpy(np.array(arr)).to(dtype)
            for name, arr in stage1_params.items()
            if name.startswith("phi.")
        }
        missing, unexpected = model.phi.load_state_dict(phi_state, strict=False)
        if missing or unexpected:
            raise ConfigurationError(f"pretrained embedding parameters do not match: missing={missing} unexpected={unexpected}")
    if not cfg.fine_tune_phi:
        for p in model.phi.parameters():
            p.requires_grad_(False)
    trainable = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(trainable, lr=cfg.learning_rate)

    cache = {int(i): prepare_clip_tensors(clips[i], embedding_cfg, dtype, normalized) for i in chosen}
    order_rng = np.random.default_rng(derive_seed(cfg.seed, _STREAM_ORDER))
    trace: list[dict] = []
    start = time.monotonic()
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(chosen)
        epoch_loss = 0.0
        opt.zero_grad()
        pending = 0
        for pos, idx in enumerate(order):
            ct = cache[int(idx)]
            pred = model(ct.v, ct.adj, ct.dist, ct.presence)
            loss = cosine_relation_loss(pred, ct.gt, ct.mask)
            (loss / cfg.batch_clips).backward()
            pending += 1
            if pending == cfg.batch_clips or pos == len(order) - 1:
                torch.nn.utils.clip_grad_norm_(trainable, cfg.grad_clip_norm)
                opt.step()
                opt.zero_grad()
                pending = 0
            epoch_loss += float(loss.detach())
        epoch_loss /= len(order)
        if not np.isfinite(epoch_loss):
            raise TrainingError("group prediction loss is not finite", epoch=epoch)
        row = {
            "epoch": epoch,
            "loss": epoch_loss,
            "lr": cfg.learning_rate,
            "wallclock_s": time.monotonic() - start,
        }
        if validation and validation_fn is not None:
            row["val_f1"] = float(validation_fn(model, validation))
        trace.append(row)
    return Stage2Result(
        model=model,
        trace=trace,
        config=cfg,
        embedding_config=embedding_cfg,
        attention_config=att_cfg,
        label_indices=[int(i) for i in chosen],
    )
