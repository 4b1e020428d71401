"""The four chat-prompt templates and their fill-in rules.

Templates live in text files ({placeholder} syntax) so wording can be
iterated without touching code; the packaged defaults carry the exact
instruction sentences the pipeline was built around, and golden tests pin
them.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping

__all__ = [
    "PromptError",
    "PromptTemplate",
    "PromptLibrary",
    "TEMPLATE_NAMES",
    "render",
    "default_library",
]

TEMPLATE_NAMES = ("subject_inference", "object_caption", "interaction", "final_inference")


class PromptError(ValueError):
    """A template could not be loaded or rendered."""


def _placeholders(text: str) -> frozenset[str]:
    names = set()
    for _, name, _, _ in string.Formatter().parse(text):
        if name:
            names.add(name)
        elif name == "":
            raise PromptError("positional placeholders are not allowed in templates")
    return frozenset(names)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str
    required: frozenset[str] = field(default=frozenset())

    @classmethod
    def from_text(cls, name: str, text: str) -> "PromptTemplate":
        return cls(name=name, text=text, required=_placeholders(text))

    def render(self, **bindings: str) -> str:
        missing = sorted(self.required - bindings.keys())
        if missing:
            raise PromptError(f"template {self.name!r} missing placeholder(s): {', '.join(missing)}")
        return self.text.format(**{k: bindings[k] for k in self.required})


def render(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """Deterministic substitution of bindings into a template."""
    return template.render(**bindings)


class PromptLibrary:
    """The named templates used by the pipeline, loaded once and immutable."""

    def __init__(self, templates: Mapping[str, PromptTemplate]):
        missing = [name for name in TEMPLATE_NAMES if name not in templates]
        if missing:
            raise PromptError(f"missing template(s): {', '.join(missing)}")
        self._templates = dict(templates)

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "PromptLibrary":
        """Load templates from a directory, falling back to the packaged defaults."""
        templates: dict[str, PromptTemplate] = {}
        for name in TEMPLATE_NAMES:
            if directory is not None:
                path = Path(directory) / f"{name}.txt"
                if not path.is_file():
                    raise PromptError(f"template file not found: {path}")
                text = path.read_text(encoding="utf-8")
            else:
                text = (
                    resources.files("refgraph").joinpath(f"templates/{name}.txt").read_text(encoding="utf-8")
                )
            templates[name] = PromptTemplate.from_text(name, text)
        return cls(templates)

    def get(self, name: str) -> PromptTemplate:
        try:
            return self._templates[name]
        except KeyError as exc:
            raise PromptError(f"unknown template {name!r}") from exc

    def render(self, name: str, **bindings: str) -> str:
        return self.get(name).render(**bindings)


@lru_cache(maxsize=1)
def default_library() -> PromptLibrary:
    return PromptLibrary.load()
