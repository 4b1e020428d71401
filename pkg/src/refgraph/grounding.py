"""Detector-output ingestion and similarity-threshold object selection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

from .embeddings import EmbeddingTable, similarity
from .geometry import BBox, GeometryError, ImageDims, box_from_record
from .query_analysis import QueryNames

__all__ = [
    "Detection",
    "DetectionSet",
    "SelectionConfig",
    "Selection",
    "DetectionSchemaError",
    "load_detections",
    "select_objects",
]


class DetectionSchemaError(ValueError):
    """A detections file record violates the schema; the message names the line."""


@dataclass(frozen=True)
class Detection:
    """One detector output: label, box, attribute words, optional confidence."""

    det_id: str
    label: str
    bbox: BBox
    attributes: tuple[str, ...] = ()
    confidence: float | None = None

    def __post_init__(self) -> None:
        if not self.label.strip():
            raise ValueError(f"detection {self.det_id!r} has an empty label")


@dataclass
class DetectionSet:
    """All detections for one image, in detector order; dims filled when the image is opened."""

    image_id: str
    detections: list[Detection] = field(default_factory=list)
    dims: ImageDims | None = None

    def __post_init__(self) -> None:
        ids = [d.det_id for d in self.detections]
        if len(set(ids)) != len(ids):
            raise DetectionSchemaError(f"duplicate detection ids for image {self.image_id!r}")

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self) -> Iterator[Detection]:
        return iter(self.detections)


@dataclass(frozen=True)
class SelectionConfig:
    """Similarity threshold and what to do when nothing clears it."""

    tau: float = 0.5
    fallback_to_all: bool = True

    def __post_init__(self) -> None:
        if not (0 <= self.tau <= 1):
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")


@dataclass(frozen=True)
class Selection:
    """Selected detections in original order, plus whether the fallback fired."""

    detections: tuple[Detection, ...]
    fallback: bool = False


def load_detections(path: str | Path) -> dict[str, DetectionSet]:
    """Parse a newline-delimited detections file into per-image sets.

    Record fields: {image_id, det_id, label, box:{form,values}, attributes,
    confidence?}. Boxes are normalized to corner form here. Images without
    records are legal and simply absent from the map.
    """
    sets: dict[str, DetectionSet] = {}
    seen_ids: dict[str, set[str]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except ValueError as exc:
                raise DetectionSchemaError(f"line {lineno}: not valid JSON: {exc}") from exc
            try:
                image_id = str(record["image_id"])
                det_id = str(record["det_id"])
                label = record["label"]
                box = box_from_record(record["box"])
            except KeyError as exc:
                raise DetectionSchemaError(f"line {lineno}: missing field {exc}") from exc
            except (GeometryError, TypeError) as exc:
                raise DetectionSchemaError(f"line {lineno}: {exc}") from exc
            if not isinstance(label, str) or not label.strip():
                raise DetectionSchemaError(f"line {lineno}: label must be a non-empty string")
            attributes = tuple(str(a) for a in record.get("attributes", []))
            confidence = record.get("confidence")
            if confidence is not None:
                confidence = float(confidence)
            if det_id in seen_ids.setdefault(image_id, set()):
                raise DetectionSchemaError(f"line {lineno}: duplicate det_id {det_id!r} for image {image_id!r}")
            seen_ids[image_id].add(det_id)
            detection = Detection(det_id=det_id, label=label, bbox=box, attributes=attributes, confidence=confidence)
            sets.setdefault(image_id, DetectionSet(image_id=image_id)).detections.append(detection)
    return sets


def select_objects(
    dets: DetectionSet | Sequence[Detection],
    names: QueryNames,
    cfg: SelectionConfig,
    table: EmbeddingTable,
) -> Selection:
    """Keep detections whose label matches some query name above the threshold.

    A detection survives when the max over names of the label/name cosine
    similarity reaches tau; detector order is preserved. When nothing
    survives (including an empty name set) and the fallback is enabled, the
    full detection set is returned with the fallback flag raised, so the
    model always receives candidates.
    """
    detections = list(dets)
    name_list = names.all_names()
    kept = []
    for det in detections:
        if not name_list:
            break
        best = max(similarity(table, det.label, name) for name in name_list)
        if best >= cfg.tau:
            kept.append(det)
    if not kept and cfg.fallback_to_all:
        return Selection(tuple(detections), fallback=True)
    return Selection(tuple(kept), fallback=False)
