"""Dataset ingestion, top-1 accuracy under strict IoU > 0.5, and analysis reports."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence, TypeVar

from .geometry import BBox, GeometryError, box_from_record, iou
from .grounding import Detection, DetectionSet
from .inference import Prediction
from .query_analysis import Query, extract_nouns
from .tagging import PosTagger

__all__ = [
    "Sample",
    "SplitReport",
    "CoverageReport",
    "DatasetSchemaError",
    "UnknownSplitError",
    "load_dataset",
    "is_correct",
    "top1_accuracy",
    "detection_coverage",
    "frequency_buckets",
    "density_buckets",
    "sweep",
    "FREQUENCY_BUCKETS",
    "DENSITY_BUCKETS",
]

log = logging.getLogger(__name__)

# Noun-frequency bucket labels: exclusive lower bound for the top bucket,
# inclusive upper bound for the bottom, so the middle takes (100, 200].
FREQUENCY_BUCKETS = (">200", "100~200", "<=100")

DENSITY_BUCKETS = ("[0,5)", "[5,10)", "[10,15)", "[15,20)", ">=20")


class DatasetSchemaError(ValueError):
    """A dataset record violates the schema; the message names the line."""


class UnknownSplitError(ValueError):
    """The requested split has no records in the dataset file."""


@dataclass(frozen=True)
class Sample:
    query_id: str
    image_id: str
    image_path: str
    query: str
    gt_box: BBox
    split: str


@dataclass
class SplitReport:
    """Accuracy and supporting counts for one split or bucket."""

    split: str
    count: int
    correct: int
    accuracy: float
    fallback_count: int = 0
    mean_iou: float = 0.0
    buckets: dict[str, "SplitReport"] = field(default_factory=dict)

    def to_record(self) -> dict:
        record = {
            "split": self.split,
            "count": self.count,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "fallback_count": self.fallback_count,
            "mean_iou": self.mean_iou,
        }
        if self.buckets:
            record["buckets"] = {name: sub.to_record() for name, sub in self.buckets.items()}
        return record


@dataclass(frozen=True)
class CoverageReport:
    """Share of ground-truth boxes matched (IoU > 0.5) by at least one candidate."""

    percent: float
    covered: int
    total: int
    missing: int = 0


def load_dataset(path: str | Path, split: str) -> list[Sample]:
    """Parse the newline-delimited dataset file, keeping only the named split.

    Record fields: {query_id, image_id, image_path, split, query,
    gt_box:{form, values}}.
    """
    samples: list[Sample] = []
    seen: set[str] = set()
    split_names: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except ValueError as exc:
                raise DatasetSchemaError(f"line {lineno}: not valid JSON: {exc}") from exc
            try:
                record_split = str(record["split"])
                split_names.add(record_split)
                if record_split != split:
                    continue
                sample = Sample(
                    query_id=str(record["query_id"]),
                    image_id=str(record["image_id"]),
                    image_path=str(record["image_path"]),
                    query=str(record["query"]),
                    gt_box=box_from_record(record["gt_box"]),
                    split=record_split,
                )
            except KeyError as exc:
                raise DatasetSchemaError(f"line {lineno}: missing field {exc}") from exc
            except (GeometryError, TypeError) as exc:
                raise DatasetSchemaError(f"line {lineno}: {exc}") from exc
            if not sample.query.strip():
                raise DatasetSchemaError(f"line {lineno}: empty query text")
            if sample.query_id in seen:
                raise DatasetSchemaError(f"line {lineno}: duplicate query_id {sample.query_id!r} in split {split!r}")
            seen.add(sample.query_id)
            samples.append(sample)
    if not samples:
        raise UnknownSplitError(f"split {split!r} not present in {path} (found: {sorted(split_names) or 'none'})")
    return samples


def is_correct(pred: BBox, gt: BBox) -> bool:
    """Strictly-greater-than-0.5 IoU criterion; an exact 0.5 scores incorrect."""
    return iou(pred, gt) > 0.5


def top1_accuracy(predictions: Mapping[str, Prediction], samples: Sequence[Sample], split: str | None = None) -> SplitReport:
    """Score predictions aligned to samples by query id."""
    if not samples:
        raise ValueError("cannot score an empty split")
    missing = [s.query_id for s in samples if s.query_id not in predictions]
    if missing:
        raise ValueError(f"predictions missing for query id(s): {missing[:5]}")
    correct = 0
    fallback = 0
    iou_total = 0.0
    for sample in samples:
        pred = predictions[sample.query_id]
        iou_total += iou(pred.bbox, sample.gt_box)
        if is_correct(pred.bbox, sample.gt_box):
            correct += 1
        if pred.fallback:
            fallback += 1
    count = len(samples)
    return SplitReport(
        split=split if split is not None else samples[0].split,
        count=count,
        correct=correct,
        accuracy=100.0 * correct / count,
        fallback_count=fallback,
        mean_iou=iou_total / count,
    )


def detection_coverage(
    detections: Mapping[str, DetectionSet],
    samples: Sequence[Sample],
    selections: Mapping[str, Sequence[Detection]] | None = None,
) -> CoverageReport:
    """Fraction of gt boxes with IoU > 0.5 against at least one candidate box.

    With `selections` (query id -> post-filter detections) the coverage is
    measured after the similarity filter; otherwise against the raw
    per-image detections. Samples with no candidates count as uncovered and
    are tallied in `missing`.
    """
    if not samples:
        raise ValueError("cannot measure coverage over an empty split")
    covered = 0
    missing = 0
    for sample in samples:
        if selections is not None:
            candidates = list(selections.get(sample.query_id, ()))
        else:
            det_set = detections.get(sample.image_id)
            candidates = list(det_set) if det_set is not None else []
        if not candidates:
            missing += 1
            log.warning("no candidate boxes for sample %s (image %s)", sample.query_id, sample.image_id)
            continue
        if any(iou(det.bbox, sample.gt_box) > 0.5 for det in candidates):
            covered += 1
    return CoverageReport(
        percent=100.0 * covered / len(samples),
        covered=covered,
        total=len(samples),
        missing=missing,
    )


def _empty_report(name: str) -> SplitReport:
    return SplitReport(split=name, count=0, correct=0, accuracy=0.0)


def _subset_report(name: str, predictions: Mapping[str, Prediction], subset: Sequence[Sample]) -> SplitReport:
    if not subset:
        return _empty_report(name)
    return top1_accuracy(predictions, subset, split=name)


def frequency_buckets(
    predictions: Mapping[str, Prediction],
    samples: Sequence[Sample],
    tagger: PosTagger,
) -> dict[str, SplitReport]:
    """Per-bucket reports by noun frequency, counted over the samples' own queries.

    Each sample lands in the bucket of its maximum-frequency extracted noun;
    nounless queries go to the low bucket with a warning.
    """
    noun_lists = {}
    counts: Counter[str] = Counter()
    for sample in samples:
        nouns = extract_nouns(Query(sample.query, sample.query_id), tagger)
        noun_lists[sample.query_id] = nouns
        counts.update(nouns)
    assignment: dict[str, list[Sample]] = {name: [] for name in FREQUENCY_BUCKETS}
    for sample in samples:
        nouns = noun_lists[sample.query_id]
        if not nouns:
            log.warning("sample %s has no extracted nouns; assigned to the low-frequency bucket", sample.query_id)
            assignment["<=100"].append(sample)
            continue
        peak = max(counts[noun] for noun in nouns)
        if peak > 200:
            assignment[">200"].append(sample)
        elif peak > 100:
            assignment["100~200"].append(sample)
        else:
            assignment["<=100"].append(sample)
    return {name: _subset_report(name, predictions, subset) for name, subset in assignment.items()}


def density_buckets(
    predictions: Mapping[str, Prediction],
    samples: Sequence[Sample],
    node_counts: Mapping[str, int],
) -> dict[str, SplitReport]:
    """Per-bucket reports by scene-graph node count, half-open boundaries."""
    assignment: dict[str, list[Sample]] = {name: [] for name in DENSITY_BUCKETS}
    for sample in samples:
        n = node_counts.get(sample.query_id, 0)
        if n < 5:
            name = "[0,5)"
        elif n < 10:
            name = "[5,10)"
        elif n < 15:
            name = "[10,15)"
        elif n < 20:
            name = "[15,20)"
        else:
            name = ">=20"
        assignment[name].append(sample)
    return {name: _subset_report(name, predictions, subset) for name, subset in assignment.items()}


T = TypeVar("T")


def sweep(parameter: str, values: Sequence[float], run_at: Callable[[float], T]) -> list[tuple[float, T]]:
    """Evaluate one knob over a list of values; the runner reuses caches underneath."""
    if parameter not in ("tau", "theta"):
        raise ValueError(f"sweepable parameters are 'tau' and 'theta', got {parameter!r}")
    return [(value, run_at(value)) for value in values]
