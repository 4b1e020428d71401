"""End-to-end orchestration: query analysis, graph construction, target inference, scoring.

One Pipeline owns the shared resources (embedding table, category list,
tagger, prompt library, backends, response cache) and runs samples through
the three stages. Samples are independent; a bounded worker pool runs them
concurrently while all derived outputs stay deterministic for a fixed
backend script.
"""

from __future__ import annotations

import logging
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from PIL import Image

from .backends import CachedChat, CacheStore, ChatBackend, SamplingParams
from .embeddings import EmbeddingTable
from .evaluation import (
    CoverageReport,
    Sample,
    SplitReport,
    density_buckets,
    detection_coverage,
    frequency_buckets,
    top1_accuracy,
)
from .geometry import round_pixel
from .grounding import Detection, DetectionSet, Selection, SelectionConfig, select_objects
from .inference import Prediction, RetryPolicy, infer_target
from .prompts import PromptLibrary, default_library
from .query_analysis import (
    NameSetEmptyError,
    Query,
    QueryNames,
    build_name_set,
    extract_nouns,
    infer_subjects,
    predict_categories,
)
from .scene_graph import (
    InteractionConfig,
    SceneGraph,
    SerialForm,
    assign_nodes,
    candidate_pairs,
    caption_node,
    encode_png,
    infer_interaction,
    serialize,
)
from .tagging import LexiconTagger, PosTagger

__all__ = ["Pipeline", "SampleOutcome", "RunResult", "DEFAULT_SAMPLING"]

log = logging.getLogger(__name__)

# Paper-default decoding (temperature 0.7 / top_p 0.8); the final reasoning
# call gets more room than the short caption/relation/subject answers.
DEFAULT_SAMPLING: dict[str, SamplingParams] = {
    "subject": SamplingParams(max_tokens=256),
    "caption": SamplingParams(max_tokens=256),
    "interaction": SamplingParams(max_tokens=256),
    "final": SamplingParams(max_tokens=512),
}


@dataclass
class SampleOutcome:
    """Everything one sample produced, or the error that stopped it."""

    sample: Sample
    prediction: Prediction | None = None
    graph: SceneGraph | None = None
    names: QueryNames | None = None
    selection: Selection | None = None
    node_count: int = 0
    exchange_keys: list[str] = field(default_factory=list)
    cache_hits: int = 0
    store_hits: int = 0
    store_misses: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.prediction is not None

    def to_record(self) -> dict:
        """The per-sample result record written to the results file."""
        record: dict = {"query_id": self.sample.query_id, "image_id": self.sample.image_id}
        if self.prediction is None:
            record["error"] = self.error or "unknown failure"
            return record
        record.update(
            {
                "target_index": self.prediction.target_index,
                "box": [round_pixel(v) for v in self.prediction.bbox.as_tuple()],
                "explanation": self.prediction.explanation,
                "fallback": self.prediction.fallback,
                "cache_hits": self.cache_hits,
            }
        )
        return record


@dataclass
class RunResult:
    outcomes: list[SampleOutcome]
    report: SplitReport
    coverage_raw: CoverageReport
    coverage_filtered: CoverageReport
    backend_calls: int = 0
    store_hits: int = 0
    store_misses: int = 0

    @property
    def failures(self) -> list[SampleOutcome]:
        return [o for o in self.outcomes if not o.ok]


class Pipeline:
    def __init__(
        self,
        *,
        table: EmbeddingTable,
        categories: Sequence[str],
        detections: Mapping[str, DetectionSet],
        vlm: ChatBackend,
        llm: ChatBackend,
        store: CacheStore,
        images_root: str | Path = ".",
        tagger: PosTagger | None = None,
        library: PromptLibrary | None = None,
        tau: float = 0.5,
        theta: float = 0.2,
        min_category_sim: float = 0.35,
        selection_fallback: bool = True,
        form: SerialForm = SerialForm.JSON,
        sampling: Mapping[str, SamplingParams] | None = None,
        retry_policy: RetryPolicy = RetryPolicy(),
        word_cap: int = 60,
        stroke_width: int = 3,
    ):
        self.table = table
        self.categories = list(categories)
        self.detections = detections
        self.vlm = vlm
        self.llm = llm
        self.store = store
        self.images_root = Path(images_root)
        self.tagger = tagger or LexiconTagger()
        self.library = library or default_library()
        self.selection_cfg = SelectionConfig(tau=tau, fallback_to_all=selection_fallback)
        self.interaction_cfg = InteractionConfig(theta=theta)
        self.min_category_sim = min_category_sim
        self.form = SerialForm(form)
        self.sampling = dict(DEFAULT_SAMPLING)
        if sampling:
            self.sampling.update(sampling)
        self.retry_policy = retry_policy
        self.word_cap = word_cap
        self.stroke_width = stroke_width

    def _image_path(self, sample: Sample) -> Path:
        path = Path(sample.image_path)
        return path if path.is_absolute() else self.images_root / path

    def analyze_query(self, query: Query, image_png: bytes, vlm: ChatBackend) -> QueryNames:
        """Stage 1 name gathering; an all-empty outcome degrades to an empty set."""
        nouns = extract_nouns(query, self.tagger)
        categories = predict_categories(nouns, self.categories, self.table, self.min_category_sim)
        subjects = infer_subjects(query, image_png, vlm, library=self.library, params=self.sampling["subject"])
        try:
            return build_name_set(nouns, categories, subjects)
        except NameSetEmptyError:
            log.warning("query %s: empty name set, selection will fall back", query.query_id)
            return QueryNames()

    def build_graph(
        self,
        sample: Sample,
        selection: Selection,
        image: Image.Image,
        vlm: ChatBackend,
    ) -> SceneGraph:
        """Stage 2: nodes with captions, then gated interaction edges."""
        nodes = assign_nodes(list(selection.detections))
        for node in nodes:
            caption_node(
                node,
                image,
                vlm,
                library=self.library,
                params=self.sampling["caption"],
                word_cap=self.word_cap,
            )
        edges = []
        for pair in candidate_pairs(nodes, self.interaction_cfg):
            edge = infer_interaction(
                pair,
                nodes,
                image,
                vlm,
                library=self.library,
                params=self.sampling["interaction"],
                word_cap=self.word_cap,
                stroke_width=self.stroke_width,
            )
            if edge is not None:
                edges.append(edge)
        return SceneGraph(nodes=nodes, edges=edges, image_id=sample.image_id, query_id=sample.query_id)

    def run_sample(self, sample: Sample) -> SampleOutcome:
        outcome = SampleOutcome(sample=sample)
        vlm = CachedChat(self.store, self.vlm)
        llm = CachedChat(self.store, self.llm)
        try:
            query = Query(sample.query, sample.query_id)
            det_set = self.detections.get(sample.image_id, DetectionSet(image_id=sample.image_id))
            with Image.open(self._image_path(sample)) as img:
                image = img.convert("RGB")
            image_png = encode_png(image)

            outcome.names = self.analyze_query(query, image_png, vlm)
            selection = select_objects(det_set, outcome.names, self.selection_cfg, self.table)
            outcome.selection = selection
            if selection.fallback:
                log.warning("query %s: no label cleared tau, falling back to all %d detections",
                            sample.query_id, len(selection.detections))
            if not selection.detections:
                raise RuntimeError(f"image {sample.image_id!r} has no detections to ground against")

            outcome.graph = self.build_graph(sample, selection, image, vlm)
            outcome.node_count = len(outcome.graph.nodes)
            outcome.prediction = infer_target(
                query,
                outcome.graph,
                llm,
                policy=self.retry_policy,
                form=self.form,
                library=self.library,
                params=self.sampling["final"],
            )
        except Exception as exc:  # per-sample failures must not abort the split
            log.error("sample %s failed: %s", sample.query_id, exc)
            log.debug("%s", traceback.format_exc())
            outcome.error = f"{type(exc).__name__}: {exc}"
        outcome.exchange_keys = vlm.keys_used + llm.keys_used
        outcome.store_hits = vlm.hits + llm.hits
        outcome.store_misses = vlm.misses + llm.misses
        return outcome

    def run_split(self, samples: Sequence[Sample], concurrency: int = 1) -> RunResult:
        """Run all samples (optionally in parallel) and assemble the split report."""
        if concurrency < 1:
            raise ValueError(f"concurrency must be >= 1, got {concurrency}")
        if concurrency == 1:
            outcomes = [self.run_sample(s) for s in samples]
        else:
            with ThreadPoolExecutor(max_workers=concurrency) as pool:
                outcomes = list(pool.map(self.run_sample, samples))
        _assign_deterministic_cache_hits(outcomes)
        return self._assemble(list(samples), outcomes)

    def _assemble(self, samples: list[Sample], outcomes: list[SampleOutcome]) -> RunResult:
        predictions = {o.sample.query_id: o.prediction for o in outcomes if o.prediction is not None}
        scored = [s for s in samples if s.query_id in predictions]
        if scored:
            report = top1_accuracy(predictions, scored)
            report.buckets.update(frequency_buckets(predictions, scored, self.tagger))
            node_counts = {o.sample.query_id: o.node_count for o in outcomes}
            for name, sub in density_buckets(predictions, scored, node_counts).items():
                report.buckets[name] = sub
        else:
            report = SplitReport(split=samples[0].split if samples else "", count=0, correct=0, accuracy=0.0)
        selections = {
            o.sample.query_id: list(o.selection.detections)
            for o in outcomes
            if o.selection is not None
        }
        coverage_raw = detection_coverage(self.detections, samples)
        coverage_filtered = detection_coverage(self.detections, samples, selections=selections)
        store_hits = sum(o.store_hits for o in outcomes)
        store_misses = sum(o.store_misses for o in outcomes)
        return RunResult(
            outcomes=outcomes,
            report=report,
            coverage_raw=coverage_raw,
            coverage_filtered=coverage_filtered,
            backend_calls=store_misses,
            store_hits=store_hits,
            store_misses=store_misses,
        )

    def graph_json(self, sample: Sample) -> tuple[str, bool]:
        """Stages 1-2 only for one sample: the serialized graph plus the fallback flag."""
        outcome = self.run_stage2(sample)
        assert outcome.graph is not None
        return serialize(outcome.graph, SerialForm.JSON), bool(outcome.selection and outcome.selection.fallback)

    def run_stage2(self, sample: Sample) -> SampleOutcome:
        """Run a sample through selection and graph construction, no final inference."""
        outcome = SampleOutcome(sample=sample)
        vlm = CachedChat(self.store, self.vlm)
        query = Query(sample.query, sample.query_id)
        det_set = self.detections.get(sample.image_id, DetectionSet(image_id=sample.image_id))
        with Image.open(self._image_path(sample)) as img:
            image = img.convert("RGB")
        image_png = encode_png(image)
        outcome.names = self.analyze_query(query, image_png, vlm)
        selection = select_objects(det_set, outcome.names, self.selection_cfg, self.table)
        outcome.selection = selection
        if not selection.detections:
            raise RuntimeError(f"image {sample.image_id!r} has no detections to ground against")
        outcome.graph = self.build_graph(sample, selection, image, vlm)
        outcome.node_count = len(outcome.graph.nodes)
        outcome.exchange_keys = vlm.keys_used
        return outcome


def _assign_deterministic_cache_hits(outcomes: Sequence[SampleOutcome]) -> None:
    """Count, per sample, exchanges already performed earlier in the run.

    Counting hits against the persistent store would make result files differ
    between cold and warm runs; counting duplicates in dataset order is the
    same number every run, warm or cold, regardless of worker interleaving.
    """
    seen: set[str] = set()
    for outcome in outcomes:
        hits = 0
        for key in outcome.exchange_keys:
            if key in seen:
                hits += 1
            else:
                seen.add(key)
        outcome.cache_hits = hits
