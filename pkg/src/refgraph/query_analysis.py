"""Turn a referring expression into the query-related object name set.

Three sources feed the set: nouns extracted from the query, COCO category
names predicted for those nouns by embedding similarity, and subjects
inferred by a vision backend looking at both the image and the query. The
union drives object selection downstream.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

from .backends import ChatBackend, SamplingParams
from .embeddings import EmbeddingTable, cosine, embed_phrase
from .prompts import PromptLibrary, default_library
from .tagging import PosTagger, word_tokenize

__all__ = [
    "Query",
    "QueryNames",
    "NameSetEmptyError",
    "load_categories",
    "default_categories",
    "extract_nouns",
    "predict_categories",
    "parse_subject_response",
    "infer_subjects",
    "build_name_set",
]

NOUN_TAGS = frozenset({"NOUN", "PROPN", "PRON"})

# Floor on noun-to-category similarity; below it static-embedding neighbours
# are noise. Tunable through SelectionConfig-style plumbing in the CLI.
DEFAULT_MIN_CATEGORY_SIM = 0.35


class NameSetEmptyError(ValueError):
    """All three name sources came back empty for a query."""


@dataclass(frozen=True)
class Query:
    text: str
    query_id: str = ""

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("query text is empty")


@dataclass(frozen=True)
class QueryNames:
    """Name set with each entry tagged by origin for reporting."""

    nouns: tuple[str, ...] = ()
    categories: tuple[str, ...] = ()
    subjects: tuple[str, ...] = ()

    def all_names(self) -> list[str]:
        return _dedup([*self.nouns, *self.categories, *self.subjects])

    def is_empty(self) -> bool:
        return not (self.nouns or self.categories or self.subjects)


def _dedup(items: Sequence[str]) -> list[str]:
    seen: dict[str, None] = {}
    for item in items:
        seen.setdefault(item, None)
    return list(seen)


def load_categories(path: str | Path) -> list[str]:
    """Read a category list, one name per line; must be unique and non-empty."""
    lines = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines()]
    categories = [line for line in lines if line]
    if not categories:
        raise ValueError(f"category file {path} is empty")
    if len(set(categories)) != len(categories):
        raise ValueError(f"category file {path} contains duplicates")
    return categories


@lru_cache(maxsize=1)
def default_categories() -> tuple[str, ...]:
    """The 80 COCO category names shipped with the package."""
    text = resources.files("refgraph").joinpath("data/coco_categories.txt").read_text(encoding="utf-8")
    return tuple(line.strip() for line in text.splitlines() if line.strip())


def extract_nouns(query: Query, tagger: PosTagger) -> list[str]:
    """Tokens tagged NOUN, PROPN, or PRON, lowercased, deduplicated, in first-appearance order."""
    tokens = word_tokenize(query.text)
    tagged = tagger.tag(tokens)
    return _dedup([tok.lower() for tok, tag in tagged if tag in NOUN_TAGS])


def predict_categories(
    nouns: Sequence[str],
    categories: Sequence[str],
    table: EmbeddingTable,
    min_sim: float = DEFAULT_MIN_CATEGORY_SIM,
) -> list[str]:
    """Map each noun to its most similar category name, kept only above min_sim.

    Out-of-vocabulary nouns (or categories) contribute nothing; the result
    is always a subset of the given category list.
    """
    predicted: list[str] = []
    category_vecs = []
    for cat in categories:
        vec = embed_phrase(table, cat)
        if vec is not None:
            category_vecs.append((cat, vec))
    for noun in nouns:
        noun_vec = embed_phrase(table, noun)
        if noun_vec is None:
            continue
        best_cat = None
        best_sim = float("-inf")
        for cat, vec in category_vecs:
            sim = cosine(noun_vec, vec)
            if sim > best_sim:
                best_cat, best_sim = cat, sim
        if best_cat is not None and best_sim >= min_sim:
            predicted.append(best_cat.lower())
    return _dedup(predicted)


_SUBJECT_SPLIT_RE = re.compile(r",|;|\n|\band\b")
_ARTICLES = ("a ", "an ", "the ")


def parse_subject_response(text: str) -> list[str]:
    """Split a backend answer into short subject names.

    Splits on commas/"and", trims punctuation and leading articles,
    lowercases. An empty list is the explicit subject-empty outcome.
    """
    subjects = []
    for chunk in _SUBJECT_SPLIT_RE.split(text.lower()):
        name = chunk.strip().strip(".:;\"'`")
        for article in _ARTICLES:
            if name.startswith(article):
                name = name[len(article):]
        name = name.strip()
        if name:
            subjects.append(name)
    return _dedup(subjects)


def infer_subjects(
    query: Query,
    image_png: bytes,
    vlm: ChatBackend,
    library: PromptLibrary | None = None,
    params: SamplingParams | None = None,
) -> list[str]:
    """Ask the vision backend for the query's subject(s), given the full image."""
    library = library or default_library()
    prompt = library.render("subject_inference", query=query.text)
    response = vlm.chat(prompt, images=[image_png], params=params)
    return parse_subject_response(response)


def build_name_set(
    nouns: Sequence[str],
    categories: Sequence[str],
    subjects: Sequence[str],
) -> QueryNames:
    """Union of the three sources, deduplicated and lowercased, tagged by origin."""
    names = QueryNames(
        nouns=tuple(_dedup([n.lower() for n in nouns])),
        categories=tuple(_dedup([c.lower() for c in categories])),
        subjects=tuple(_dedup([s.lower() for s in subjects])),
    )
    if names.is_empty():
        raise NameSetEmptyError("noun extraction, category prediction, and subject inference all came back empty")
    return names
