"""Gravity-inspired graph autoencoders for cold-start similar-item ranking."""

from .graph import (
    AttributeTable,
    DataFormatError,
    DataSplit,
    DirectedWeightedGraph,
    MaskedGraphView,
    NodeMeta,
    extend_with_cold,
    load_dataset,
    make_split,
    mask_cold,
    normalize_out_degree,
)
from .models import DecoderKind, GravityEmbedding, TrainConfig, TrainedModel, train
from .coldstart import RankedList, project, rank_queries, rank_top_k, score_all
from .evaluation import EvalReport, evaluate, map_at_k, ndcg_at_k, recall_at_k

__version__ = "0.1.0"
