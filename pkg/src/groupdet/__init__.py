"""Social group detection for multi-person scene clips.

Two-stage pipeline: a position-swap pretext task pretrains a shared social
relation embedding, then a stacked-attention head predicts pairwise group
relations that label propagation turns into per-frame group partitions.
"""

from .embedding import EmbeddingConfig, RelationEmbeddingNet, embed
from .errors import (
    CapacityError,
    ConfigurationError,
    GenerationError,
    GroupDetError,
    ParseError,
    StateError,
    TrainingError,
    ValidationError,
)
from .features import (
    DistanceChannel,
    FeatureBlock,
    assemble_feature_block,
    encode_position,
    normalize_skeleton,
    pairwise_distance_channel,
)
from .io import load_clip_dataset, save_clip_dataset
from .metrics import CurveResult, HalfMetricResult, group_iou, half_metrics, iou_auc, iou_gm
from .prediction import (
    StackAttConfig,
    Stage2Config,
    Stage2Model,
    attention_score,
    cosine_relation_loss,
    train_stage2,
)
from .propagation import (
    PropagationConfig,
    baseline_partition_from_distances,
    drop_singletons,
    partition_from_relations,
)
from .scene import GroupPartition, SceneClip, relation_matrix_from_partition
from .simulator import (
    NeighborCluster,
    Stage1Config,
    SwapSpec,
    apply_swap,
    neighbor_cluster,
    select_swap_set,
    train_stage1,
)
from .synth import SynthParams, generate_synthetic_scene

__version__ = "0.1.0"
