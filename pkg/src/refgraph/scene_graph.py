"""Query-driven scene graphs: node assignment, captioning, interaction gating, serialization.

A graph's nodes carry the selected detections (coordinates and attribute
words straight from the detector) plus a generated caption per region; its
edges carry free-text relation triplets for object pairs whose overlap
ratio clears the interaction threshold.
"""

from __future__ import annotations

import io
import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from PIL import Image, ImageDraw

from .backends import ChatBackend, SamplingParams
from .geometry import BBox, GeometryError, ImageDims, area, clamp_to_image, overlap_ratio_smaller, round_pixel
from .grounding import Detection
from .prompts import PromptLibrary, default_library

__all__ = [
    "Node",
    "Edge",
    "SceneGraph",
    "InteractionConfig",
    "SerialForm",
    "GraphSchemaError",
    "assign_nodes",
    "caption_node",
    "candidate_pairs",
    "highlight_pair",
    "infer_interaction",
    "serialize",
    "parse",
    "crop_region",
    "encode_png",
    "normalize_snippet",
    "first_sentence",
]

log = logging.getLogger(__name__)

# Dense scenes degrade with crowded prompts; captions and relations are
# capped at this many words unless overridden.
DEFAULT_WORD_CAP = 60

RED = (255, 0, 0)
BLUE = (0, 0, 255)


class GraphSchemaError(ValueError):
    """A scene graph (or its serialized form) violates the schema."""


@dataclass
class Node:
    """Graph node: 1-based index, detector label/box/attributes, generated caption."""

    index: int
    label: str
    bbox: BBox
    attributes: tuple[str, ...] = ()
    caption: str = ""


@dataclass(frozen=True)
class Edge:
    """Relation triplet {obj1, relation, obj2} over node indices."""

    obj1: int
    obj2: int
    relation: str

    def __post_init__(self) -> None:
        if self.obj1 == self.obj2:
            raise GraphSchemaError(f"self-edge on node {self.obj1}")
        if not self.relation.strip():
            raise GraphSchemaError(f"empty relation between {self.obj1} and {self.obj2}")


@dataclass
class SceneGraph:
    nodes: list[Node] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)
    image_id: str = ""
    query_id: str = ""

    def __post_init__(self) -> None:
        # Canonical order (nodes by index, edges by endpoints) so structural
        # equality and serialization agree regardless of build order.
        self.nodes = sorted(self.nodes, key=lambda n: n.index)
        self.edges = sorted(self.edges, key=lambda e: (e.obj1, e.obj2))
        indices = [node.index for node in self.nodes]
        if indices != list(range(1, len(self.nodes) + 1)):
            raise GraphSchemaError(f"node indices must be contiguous from 1, got {indices}")
        valid = set(indices)
        pairs = set()
        for edge in self.edges:
            if edge.obj1 not in valid or edge.obj2 not in valid:
                raise GraphSchemaError(f"edge ({edge.obj1}, {edge.obj2}) references a missing node")
            pair = frozenset((edge.obj1, edge.obj2))
            if pair in pairs:
                raise GraphSchemaError(f"duplicate edge for pair {tuple(sorted(pair))}")
            pairs.add(pair)

    def node(self, index: int) -> Node:
        if 1 <= index <= len(self.nodes):
            return self.nodes[index - 1]
        raise KeyError(index)


@dataclass(frozen=True)
class InteractionConfig:
    """Overlap-ratio threshold gating which pairs get a relation call."""

    theta: float = 0.2

    def __post_init__(self) -> None:
        if not (0 <= self.theta <= 1):
            raise ValueError(f"theta must be in [0, 1], got {self.theta}")


class SerialForm(str, Enum):
    JSON = "json"
    STRUCTURED = "structured"
    NATURAL = "natural"


def assign_nodes(selected: Sequence[Detection]) -> list[Node]:
    """Index the selected detections 1..n in input order; captions start empty."""
    if not selected:
        raise ValueError("cannot build a scene graph from zero detections")
    return [
        Node(index=i, label=det.label, bbox=det.bbox, attributes=det.attributes)
        for i, det in enumerate(selected, start=1)
    ]


def encode_png(image: Image.Image) -> bytes:
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def crop_region(image: Image.Image, bbox: BBox) -> Image.Image | None:
    """Crop the box region, clamped to the image; None when the crop is unusable."""
    dims = ImageDims(image.width, image.height)
    try:
        clamped = clamp_to_image(bbox, dims)
    except GeometryError:
        return None
    if area(clamped) <= 0:
        return None
    left = int(clamped.x1)
    top = int(clamped.y1)
    right = max(left + 1, round_pixel(clamped.x2))
    bottom = max(top + 1, round_pixel(clamped.y2))
    return image.crop((left, top, right, bottom))


def normalize_snippet(text: str, word_cap: int = DEFAULT_WORD_CAP) -> str:
    """Collapse whitespace and truncate on a word boundary at the cap."""
    words = text.split()
    return " ".join(words[:word_cap])


_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


def first_sentence(text: str) -> str:
    parts = _SENTENCE_RE.split(text.strip(), maxsplit=1)
    return parts[0] if parts else ""


def caption_node(
    node: Node,
    image: Image.Image,
    vlm: ChatBackend,
    library: PromptLibrary | None = None,
    params: SamplingParams | None = None,
    word_cap: int = DEFAULT_WORD_CAP,
) -> str:
    """Caption one node's image region and store the text on the node.

    Degenerate crops (zero-area or fully outside) get an empty caption plus
    a warning instead of aborting the sample.
    """
    region = crop_region(image, node.bbox)
    if region is None:
        log.warning("node %d (%s): degenerate crop %s, caption left empty", node.index, node.label, node.bbox.as_tuple())
        node.caption = ""
        return ""
    library = library or default_library()
    prompt = library.render("object_caption", obj_name=node.label)
    response = vlm.chat(prompt, images=[encode_png(region)], params=params)
    node.caption = normalize_snippet(response, word_cap)
    return node.caption


def candidate_pairs(nodes: Sequence[Node], cfg: InteractionConfig) -> list[tuple[int, int]]:
    """Unordered index pairs whose overlap ratio strictly exceeds theta."""
    ordered = sorted(nodes, key=lambda n: n.index)
    pairs = []
    for a_pos, node_a in enumerate(ordered):
        for node_b in ordered[a_pos + 1:]:
            if overlap_ratio_smaller(node_a.bbox, node_b.bbox) > cfg.theta:
                pairs.append((node_a.index, node_b.index))
    return pairs


def highlight_pair(image: Image.Image, b1: BBox, b2: BBox, stroke_width: int = 3) -> Image.Image:
    """Copy the image with b1 outlined red and b2 outlined blue (blue drawn last)."""
    if stroke_width <= 0:
        raise ValueError(f"stroke width must be positive, got {stroke_width}")
    annotated = image.copy()
    draw = ImageDraw.Draw(annotated)
    draw.rectangle(b1.as_tuple(), outline=RED, width=stroke_width)
    draw.rectangle(b2.as_tuple(), outline=BLUE, width=stroke_width)
    return annotated


def infer_interaction(
    pair: tuple[int, int],
    nodes: Sequence[Node],
    image: Image.Image,
    vlm: ChatBackend,
    library: PromptLibrary | None = None,
    params: SamplingParams | None = None,
    word_cap: int = DEFAULT_WORD_CAP,
    stroke_width: int = 3,
) -> Edge | None:
    """Ask the vision backend to describe one gated pair on a highlighted image.

    The relation keeps only the first sentence of the answer, length-capped;
    an empty answer drops the edge with a warning.
    """
    by_index = {node.index: node for node in nodes}
    node_a, node_b = by_index[pair[0]], by_index[pair[1]]
    highlighted = highlight_pair(image, node_a.bbox, node_b.bbox, stroke_width=stroke_width)
    library = library or default_library()
    prompt = library.render("interaction")
    response = vlm.chat(prompt, images=[encode_png(highlighted)], params=params)
    relation = normalize_snippet(first_sentence(response), word_cap)
    if not relation:
        log.warning("pair (%d, %d): empty relation response, edge dropped", pair[0], pair[1])
        return None
    return Edge(obj1=node_a.index, obj2=node_b.index, relation=relation)


def _node_payload(node: Node) -> dict:
    return {
        "id": node.index,
        "label": [node.label],
        "box": [round_pixel(v) for v in node.bbox.as_tuple()],
        "attributes": list(node.attributes),
        "caption": node.caption,
    }


def serialize(sg: SceneGraph, form: SerialForm = SerialForm.JSON) -> str:
    """Deterministic text for the graph in one of the three prompt forms.

    The JSON form fixes key order (image_id, query_id, objects, relations;
    id, label, box, attributes, caption per object) and rounds coordinates
    half-away-from-zero to integers. The structured form flattens the same
    fields with labels; the natural form emits one caption line per node.
    """
    form = SerialForm(form)
    nodes = sg.nodes
    edges = sg.edges
    if form is SerialForm.JSON:
        doc = {
            "image_id": sg.image_id,
            "query_id": sg.query_id,
            "objects": [_node_payload(n) for n in nodes],
            "relations": [{"obj1": e.obj1, "relation": e.relation, "obj2": e.obj2} for e in edges],
        }
        return json.dumps(doc, ensure_ascii=False, separators=(",", ":"))
    if form is SerialForm.STRUCTURED:
        lines = []
        for n in nodes:
            box = [round_pixel(v) for v in n.bbox.as_tuple()]
            attrs = ", ".join(n.attributes) if n.attributes else "none"
            caption = n.caption if n.caption else "none"
            lines.append(f"Object {n.index}. label: {n.label}, box: {box}, attributes: {attrs}, caption: {caption}")
        for e in edges:
            lines.append(f"Relation. obj1: {e.obj1}, relation: {e.relation}, obj2: {e.obj2}")
        return "\n".join(lines)
    # Natural language: the captions-only arm; labels stand in for missing captions.
    return "\n".join(f"Object {n.index}: {n.caption or n.label}" for n in nodes)


def parse(text: str, form: SerialForm = SerialForm.JSON) -> SceneGraph:
    """Rebuild a graph from serialize(JSON) output; unknown keys are ignored."""
    form = SerialForm(form)
    if form is not SerialForm.JSON:
        raise GraphSchemaError(f"only the JSON form is parseable, got {form.value!r}")
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise GraphSchemaError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise GraphSchemaError("top-level JSON value must be an object")
    nodes = []
    for obj in doc.get("objects", []):
        if "id" not in obj:
            raise GraphSchemaError(f"object record missing 'id': {obj!r}")
        if "label" not in obj or "box" not in obj:
            raise GraphSchemaError(f"object {obj.get('id')!r} missing 'label' or 'box'")
        label = obj["label"]
        if isinstance(label, list):
            if not label or not isinstance(label[0], str):
                raise GraphSchemaError(f"object {obj['id']!r} has an invalid label {label!r}")
            label = label[0]
        box = obj["box"]
        if not isinstance(box, list) or len(box) != 4:
            raise GraphSchemaError(f"object {obj['id']!r} has an invalid box {box!r}")
        try:
            bbox = BBox(*[float(v) for v in box])
        except (TypeError, ValueError, GeometryError) as exc:
            raise GraphSchemaError(f"object {obj['id']!r}: {exc}") from exc
        nodes.append(
            Node(
                index=int(obj["id"]),
                label=label,
                bbox=bbox,
                attributes=tuple(str(a) for a in obj.get("attributes", [])),
                caption=str(obj.get("caption", "")),
            )
        )
    edges = []
    for rel in doc.get("relations", []):
        try:
            edges.append(Edge(obj1=int(rel["obj1"]), obj2=int(rel["obj2"]), relation=str(rel["relation"])))
        except KeyError as exc:
            raise GraphSchemaError(f"relation record missing {exc}: {rel!r}") from exc
    return SceneGraph(
        nodes=nodes,
        edges=edges,
        image_id=str(doc.get("image_id", "")),
        query_id=str(doc.get("query_id", "")),
    )
