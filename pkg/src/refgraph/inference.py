"""Final target selection: prompt assembly, answer parsing, index-to-box resolution."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .backends import ChatBackend, SamplingParams
from .geometry import BBox
from .prompts import PromptLibrary, default_library
from .query_analysis import Query
from .scene_graph import SceneGraph, SerialForm, serialize

__all__ = [
    "Prediction",
    "ParsedIndex",
    "RetryPolicy",
    "build_final_prompt",
    "parse_target_index",
    "extract_explanation",
    "infer_target",
]

FORMAT_REMINDER = (
    "Remember: answer in exactly this format, nothing else first:\n"
    "TARGET: <id>\nEXPLANATION: <one short explanation>"
)


@dataclass(frozen=True)
class RetryPolicy:
    """Unparseable answers get this many re-asks, then node 1 as the last resort."""

    reasks: int = 1
    reminder: str = FORMAT_REMINDER

    def __post_init__(self) -> None:
        if self.reasks < 0:
            raise ValueError(f"reasks must be >= 0, got {self.reasks}")


@dataclass(frozen=True)
class ParsedIndex:
    index: int
    recovered: bool


@dataclass(frozen=True)
class Prediction:
    """Chosen node index, its box (bit-identical to the node's), and the explanation."""

    target_index: int
    bbox: BBox
    explanation: str
    raw_response: str
    fallback: bool = False


_TARGET_RE = re.compile(r"TARGET\s*:\s*(\d+)", re.IGNORECASE)
_STANDALONE_INT_RE = re.compile(r"(?<![\w.])(\d+)(?!\.?\d)")
_EXPLANATION_RE = re.compile(r"EXPLANATION\s*:\s*(.+)", re.IGNORECASE | re.DOTALL)


def parse_target_index(response: str, n: int) -> ParsedIndex | None:
    """Extract the answered node index from a response, never outside [1, n].

    Primary rule: the integer after "TARGET:". Recovery rule: the last
    standalone integer in [1, n] anywhere in the text, flagged. None means
    neither applied; failures are values, not exceptions.
    """
    if n < 1:
        raise ValueError(f"node count must be >= 1, got {n}")
    match = _TARGET_RE.search(response)
    if match:
        idx = int(match.group(1))
        if 1 <= idx <= n:
            return ParsedIndex(idx, recovered=False)
    for token in reversed(_STANDALONE_INT_RE.findall(response)):
        value = int(token)
        if 1 <= value <= n:
            return ParsedIndex(value, recovered=True)
    return None


def extract_explanation(response: str) -> str:
    match = _EXPLANATION_RE.search(response)
    if match:
        return match.group(1).strip()
    return response.strip()


def build_final_prompt(
    query: Query,
    sg: SceneGraph,
    form: SerialForm = SerialForm.JSON,
    library: PromptLibrary | None = None,
) -> str:
    """Instruction + query + the graph serialized in the chosen form."""
    library = library or default_library()
    return library.render("final_inference", query=query.text, scene_graph_json=serialize(sg, form))


def infer_target(
    query: Query,
    sg: SceneGraph,
    llm: ChatBackend,
    policy: RetryPolicy = RetryPolicy(),
    form: SerialForm = SerialForm.JSON,
    library: PromptLibrary | None = None,
    params: SamplingParams | None = None,
) -> Prediction:
    """Ask for the target index and resolve it to the node's bounding box.

    A failed or out-of-range parse triggers one re-ask with a format
    reminder appended; if that also fails, node 1 is predicted with the
    fallback flag raised so accuracy accounting stays honest.
    """
    if not sg.nodes:
        raise ValueError("cannot infer a target over an empty scene graph")
    n = len(sg.nodes)
    prompt = build_final_prompt(query, sg, form=form, library=library)
    response = llm.chat(prompt, params=params)
    parsed = parse_target_index(response, n)
    asks = 1
    while parsed is None and asks <= policy.reasks:
        response = llm.chat(prompt + "\n" + policy.reminder, params=params)
        parsed = parse_target_index(response, n)
        asks += 1
    if parsed is None:
        index, fallback = 1, True
    else:
        index = parsed.index
        fallback = parsed.recovered or asks > 1
    node = sg.node(index)
    return Prediction(
        target_index=index,
        bbox=node.bbox,
        explanation=extract_explanation(response),
        raw_response=response,
        fallback=fallback,
    )
