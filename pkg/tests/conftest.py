"""Shared fixtures: a hand-designed embedding vocabulary, images, and the golden workspace.

The embedding vectors are integer-valued so dot products and norms are exact
in float64; similarity comparisons then agree bit-for-bit between the library
and the independent oracles used in tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import pytest
from PIL import Image

from refgraph.embeddings import EmbeddingTable, write_embedding_table

# Clusters: people (e1), drink vessels (e2), food (e3), pets (e4),
# furniture (e5/e6), flying things (e7), vehicles (e8).
FIXTURE_VECTORS: dict[str, list[float]] = {
    "person": [4, 0, 0, 0, 0, 0, 0, 0],
    "man": [4, 1, 0, 0, 0, 0, 0, 0],
    "woman": [4, 0, 1, 0, 0, 0, 0, 0],
    "guy": [3, 2, 0, 0, 0, 0, 0, 0],
    "dog": [0, 0, 0, 4, 0, 0, 0, 0],
    "puppy": [0, 0, 1, 4, 0, 0, 0, 0],
    "cat": [1, 0, 0, 4, 0, 0, 0, 0],
    "table": [0, 0, 0, 0, 4, 0, 0, 0],
    "desk": [0, 0, 0, 0, 4, 1, 0, 0],
    "chair": [0, 0, 0, 0, 3, 3, 0, 0],
    "couch": [0, 0, 0, 0, 3, 4, 0, 0],
    "kite": [0, 0, 0, 0, 0, 0, 4, 0],
    "umbrella": [0, 0, 0, 0, 0, 1, 4, 0],
    "car": [0, 0, 0, 0, 0, 0, 0, 4],
    "truck": [1, 0, 0, 0, 0, 0, 0, 4],
    "bottle": [0, 4, 0, 0, 0, 0, 0, 1],
    "cup": [0, 4, 1, 0, 0, 0, 0, 0],
    "pizza": [0, 0, 4, 0, 0, 1, 0, 0],
    "food": [0, 0, 4, 1, 0, 0, 0, 0],
}


@pytest.fixture(scope="session")
def fixture_table() -> EmbeddingTable:
    return EmbeddingTable(FIXTURE_VECTORS, dim=8)


@pytest.fixture(scope="session")
def fixture_vectors() -> dict[str, list[float]]:
    return FIXTURE_VECTORS


def make_image(path: Path, color: tuple[int, int, int], size: tuple[int, int] = (128, 96)) -> None:
    Image.new("RGB", size, color).save(path)


GOLDEN_DETECTIONS = [
    {"image_id": "img1", "det_id": "d1", "label": "man", "box": {"form": "xyxy", "values": [10, 20, 50, 90]}, "attributes": ["tall"]},
    {"image_id": "img1", "det_id": "d2", "label": "kite", "box": {"form": "xywh", "values": [70, 5, 30, 25]}, "attributes": ["red"]},
    {"image_id": "img1", "det_id": "d3", "label": "table", "box": {"form": "xyxy", "values": [55, 60, 120, 92]}, "attributes": []},
    {"image_id": "img2", "det_id": "d1", "label": "table", "box": {"form": "xyxy", "values": [5, 40, 60, 90]}, "attributes": ["wooden"]},
    {"image_id": "img2", "det_id": "d2", "label": "chair", "box": {"form": "xyxy", "values": [62, 45, 100, 90]}, "attributes": []},
    {"image_id": "img2", "det_id": "d3", "label": "cup", "box": {"form": "xyxy", "values": [20, 10, 35, 25]}, "attributes": ["white"]},
    {"image_id": "img3", "det_id": "d1", "label": "dog", "box": {"form": "xyxy", "values": [30, 60, 70, 90]}, "attributes": ["brown"]},
    {"image_id": "img3", "det_id": "d2", "label": "table", "box": {"form": "xyxy", "values": [10, 40, 90, 85]}, "attributes": []},
    {"image_id": "img3", "det_id": "d3", "label": "person", "box": {"form": "xyxy", "values": [95, 10, 125, 70]}, "attributes": ["standing"]},
    {"image_id": "img4", "det_id": "d1", "label": "woman", "box": {"form": "xyxy", "values": [10, 10, 60, 90]}, "attributes": ["smiling"]},
    {"image_id": "img4", "det_id": "d2", "label": "umbrella", "box": {"form": "xyxy", "values": [20, 5, 70, 40]}, "attributes": ["blue"]},
    {"image_id": "img4", "det_id": "d3", "label": "man", "box": {"form": "xyxy", "values": [70, 20, 120, 95]}, "attributes": []},
    {"image_id": "img5", "det_id": "d1", "label": "car", "box": {"form": "xyxy", "values": [5, 50, 60, 85]}, "attributes": ["red"], "confidence": 0.93},
    {"image_id": "img5", "det_id": "d2", "label": "truck", "box": {"form": "xyxy", "values": [65, 45, 120, 88]}, "attributes": []},
    {"image_id": "img5", "det_id": "d3", "label": "dog", "box": {"form": "xyxy", "values": [40, 20, 55, 40]}, "attributes": []},
    {"image_id": "img6", "det_id": "d1", "label": "pizza", "box": {"form": "xyxy", "values": [10, 55, 50, 90]}, "attributes": ["round"]},
    {"image_id": "img6", "det_id": "d2", "label": "bottle", "box": {"form": "xyxy", "values": [60, 10, 75, 50]}, "attributes": []},
    {"image_id": "img6", "det_id": "d3", "label": "cup", "box": {"form": "xyxy", "values": [85, 15, 100, 35]}, "attributes": ["white"]},
    {"image_id": "img7", "det_id": "d1", "label": "table", "box": {"form": "xyxy", "values": [2, 50, 30, 90]}, "attributes": []},
    {"image_id": "img7", "det_id": "d2", "label": "chair", "box": {"form": "xyxy", "values": [35, 50, 60, 90]}, "attributes": []},
    {"image_id": "img7", "det_id": "d3", "label": "cup", "box": {"form": "xyxy", "values": [65, 50, 80, 70]}, "attributes": []},
    {"image_id": "img7", "det_id": "d4", "label": "bottle", "box": {"form": "xyxy", "values": [85, 40, 98, 75]}, "attributes": []},
    {"image_id": "img7", "det_id": "d5", "label": "couch", "box": {"form": "xyxy", "values": [100, 50, 126, 92]}, "attributes": []},
]

GOLDEN_SAMPLES = [
    {"query_id": "q01", "image_id": "img1", "image_path": "images/img1.png", "split": "val", "query": "man on the left", "gt_box": {"form": "xyxy", "values": [10, 20, 50, 90]}},
    {"query_id": "q02", "image_id": "img1", "image_path": "images/img1.png", "split": "val", "query": "kite in the sky", "gt_box": {"form": "xywh", "values": [70, 5, 30, 25]}},
    {"query_id": "q03", "image_id": "img2", "image_path": "images/img2.png", "split": "val", "query": "left thing", "gt_box": {"form": "xyxy", "values": [5, 40, 60, 90]}},
    {"query_id": "q04", "image_id": "img3", "image_path": "images/img3.png", "split": "val", "query": "dog under the table", "gt_box": {"form": "xyxy", "values": [30, 60, 70, 90]}},
    {"query_id": "q05", "image_id": "img4", "image_path": "images/img4.png", "split": "val", "query": "woman holding the umbrella", "gt_box": {"form": "xyxy", "values": [10, 10, 60, 90]}},
    {"query_id": "q06", "image_id": "img4", "image_path": "images/img4.png", "split": "val", "query": "guy on the right", "gt_box": {"form": "xyxy", "values": [70, 20, 120, 95]}},
    {"query_id": "q07", "image_id": "img5", "image_path": "images/img5.png", "split": "val", "query": "red car parked", "gt_box": {"form": "xyxy", "values": [5, 50, 60, 85]}},
    {"query_id": "q08", "image_id": "img6", "image_path": "images/img6.png", "split": "val", "query": "pizza on a plate", "gt_box": {"form": "xyxy", "values": [85, 15, 100, 35]}},
    {"query_id": "q09", "image_id": "img6", "image_path": "images/img6.png", "split": "val", "query": "bottle next to the cup", "gt_box": {"form": "xyxy", "values": [60, 10, 75, 50]}},
    {"query_id": "q10", "image_id": "img7", "image_path": "images/img7.png", "split": "val", "query": "zzzq widget", "gt_box": {"form": "xyxy", "values": [5, 5, 20, 20]}},
]

GOLDEN_CAPTIONS = {
    "man": "a man in a dark jacket standing upright",
    "kite": "a red kite flying high",
    "table": "a wooden table with curved legs",
    "chair": "a simple chair beside the table",
    "cup": "a small white cup",
    "dog": "a brown dog lying down",
    "person": "a person standing tall",
    "woman": "a smiling woman in a coat",
    "umbrella": "a blue umbrella held open",
    "car": "a shiny red car",
    "truck": "a large delivery truck",
    "pizza": "a round pizza with toppings",
    "bottle": "a glass bottle half full",
    "couch": "a long comfortable couch",
}

GOLDEN_SUBJECTS = {
    "man on the left": "man",
    "kite in the sky": "kite",
    "left thing": "table",
    "dog under the table": "dog",
    "woman holding the umbrella": "woman",
    "guy on the right": "man",
    "red car parked": "car",
    "pizza on a plate": "pizza",
    "bottle next to the cup": "bottle",
    "zzzq widget": "",
}

GOLDEN_FINAL_ANSWERS = {
    "man on the left": "TARGET: 1\nEXPLANATION: The man is the only person and sits on the left.",
    "kite in the sky": "TARGET: 1\nEXPLANATION: The kite is the only match.",
    "left thing": "TARGET: 1\nEXPLANATION: The table is the leftmost object.",
    "dog under the table": "TARGET: 1\nEXPLANATION: The dog sits under the table.",
    "woman holding the umbrella": "TARGET: 1\nEXPLANATION: The woman holds the umbrella.",
    "guy on the right": "TARGET: 2\nEXPLANATION: The man is on the right side.",
    "red car parked": "I think object 2 matches best.",
    "pizza on a plate": "TARGET: 1\nEXPLANATION: The pizza is the only food item.",
    "bottle next to the cup": "TARGET: 1\nEXPLANATION: The bottle stands next to the cup.",
    "zzzq widget": "TARGET: 3\nEXPLANATION: Guessing the middle object.",
}

GOLDEN_RELATION = "They are right next to each other."

# Expected outcome per sample: (target index, box, prediction fallback, cache hits)
GOLDEN_EXPECTED = {
    "q01": (1, [10, 20, 50, 90], False, 0),
    "q02": (1, [70, 5, 100, 30], False, 0),
    "q03": (1, [5, 40, 60, 90], False, 0),
    "q04": (1, [30, 60, 70, 90], False, 0),
    "q05": (1, [10, 10, 60, 90], False, 0),
    "q06": (2, [70, 20, 120, 95], False, 2),
    "q07": (2, [65, 45, 120, 88], True, 0),
    "q08": (1, [10, 55, 50, 90], False, 0),
    "q09": (1, [60, 10, 75, 50], False, 0),
    "q10": (3, [65, 50, 80, 70], False, 0),
}


def golden_mock_rules() -> list[dict]:
    rules = []
    for query, subject in GOLDEN_SUBJECTS.items():
        rules.append({"pattern": f"Extract the subject.*{query}", "response": subject})
    for label, caption in GOLDEN_CAPTIONS.items():
        rules.append({"pattern": f"caption for the {label} in the image", "response": caption})
    rules.append({"pattern": "relationship or interaction", "response": GOLDEN_RELATION})
    for query, answer in GOLDEN_FINAL_ANSWERS.items():
        rules.append({"pattern": f"Select the object.*{query}", "response": answer})
    return rules


@dataclass
class GoldenWorkspace:
    root: Path
    config: Path
    dataset: Path
    detections: Path
    embeddings: Path
    mock_script: Path
    images_root: Path
    cache_dir: Path
    out_dir: Path


_IMAGE_COLORS = {
    "img1": (200, 220, 255),
    "img2": (220, 200, 180),
    "img3": (180, 220, 180),
    "img4": (240, 210, 200),
    "img5": (200, 200, 200),
    "img6": (250, 240, 200),
    "img7": (210, 210, 240),
}


def build_golden_workspace(root: Path) -> GoldenWorkspace:
    root.mkdir(parents=True, exist_ok=True)
    images_root = root / "images"
    images_root.mkdir(exist_ok=True)
    for image_id, color in _IMAGE_COLORS.items():
        make_image(images_root / f"{image_id}.png", color)

    dataset = root / "dataset.jsonl"
    dataset.write_text("\n".join(json.dumps(s) for s in GOLDEN_SAMPLES) + "\n", encoding="utf-8")
    detections = root / "detections.jsonl"
    detections.write_text("\n".join(json.dumps(d) for d in GOLDEN_DETECTIONS) + "\n", encoding="utf-8")
    embeddings = root / "embeddings.bin"
    write_embedding_table(embeddings, FIXTURE_VECTORS)
    mock_script = root / "mock_script.json"
    mock_script.write_text(json.dumps({"rules": golden_mock_rules()}, indent=2), encoding="utf-8")

    cache_dir = root / "cache"
    out_dir = root / "out"
    config = root / "config.json"
    config.write_text(
        json.dumps(
            {
                "dataset": str(dataset),
                "split": "val",
                "detections": str(detections),
                "images_root": str(root),
                "embeddings": str(embeddings),
                "mock_script": str(mock_script),
                "cache_dir": str(cache_dir),
                "out_dir": str(out_dir),
                "tau": 0.5,
                "theta": 0.2,
                "form": "json",
                "concurrency": 2,
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    return GoldenWorkspace(
        root=root,
        config=config,
        dataset=dataset,
        detections=detections,
        embeddings=embeddings,
        mock_script=mock_script,
        images_root=images_root,
        cache_dir=cache_dir,
        out_dir=out_dir,
    )


@pytest.fixture
def golden_workspace(tmp_path: Path) -> GoldenWorkspace:
    return build_golden_workspace(tmp_path / "golden")
