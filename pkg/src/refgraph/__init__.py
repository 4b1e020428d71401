"""Zero-shot referring-expression grounding with query-driven scene graphs.

Given an image, pre-computed object detections, and a natural-language
query, the pipeline builds a scene graph restricted to query-related
objects (coordinates, attributes, generated captions, gated interaction
triplets) and asks a chat-model backend to pick the target object, then
scores top-1 accuracy under the strict IoU > 0.5 criterion.
"""

from .backends import (
    BackendConfig,
    CacheStore,
    CachedChat,
    ChatBackend,
    HttpChatBackend,
    MockChatBackend,
    SamplingParams,
    mock_backend,
)
from .embeddings import EmbeddingTable, cosine, embed_phrase, load_embedding_table
from .evaluation import Sample, SplitReport, is_correct, load_dataset, top1_accuracy
from .geometry import BBox, ImageDims, area, clamp_to_image, iou, overlap_ratio_smaller
from .grounding import Detection, DetectionSet, SelectionConfig, load_detections, select_objects
from .inference import Prediction, infer_target, parse_target_index
from .pipeline import Pipeline
from .query_analysis import Query, QueryNames, build_name_set, extract_nouns
from .scene_graph import Edge, Node, SceneGraph, SerialForm, candidate_pairs, parse, serialize
from .tagging import LexiconTagger

__version__ = "0.1.0"
