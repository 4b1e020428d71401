"""Run configuration: one structured document, flag overrides, exhaustive validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .backends import BackendConfig, SamplingParams

__all__ = ["RunConfig", "ConfigError", "load_run_config", "backend_from_section", "sampling_from_section"]

SAMPLING_ROLES = ("subject", "caption", "interaction", "final")
DEFAULT_MAX_TOKENS = {"subject": 256, "caption": 256, "interaction": 256, "final": 512}


class ConfigError(ValueError):
    """Invalid run configuration; collects every problem before failing."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in problems))


@dataclass
class RunConfig:
    dataset: str = ""
    split: str = "val"
    detections: str = ""
    images_root: str = "."
    embeddings: str = ""
    embeddings_limit: int | None = None
    categories: str | None = None
    tau: float = 0.5
    theta: float = 0.2
    min_category_sim: float = 0.35
    selection_fallback: bool = True
    form: str = "json"
    vlm: dict = field(default_factory=dict)
    llm: dict = field(default_factory=dict)
    mock_script: str | None = None
    cache_dir: str = ".refgraph_cache"
    out_dir: str = "out"
    concurrency: int = 2
    word_cap: int = 60
    stroke_width: int = 3
    prompts_dir: str | None = None
    sampling: dict = field(default_factory=dict)

    def validate(self) -> None:
        """Collect every validation failure before any work starts."""
        problems: list[str] = []
        for name, value in (("dataset", self.dataset), ("detections", self.detections), ("embeddings", self.embeddings)):
            if not value:
                problems.append(f"{name} path is required")
            elif not Path(value).is_file():
                problems.append(f"{name} file not found: {value}")
        if not Path(self.images_root).is_dir():
            problems.append(f"images_root is not a directory: {self.images_root}")
        if self.categories is not None and not Path(self.categories).is_file():
            problems.append(f"categories file not found: {self.categories}")
        if self.prompts_dir is not None and not Path(self.prompts_dir).is_dir():
            problems.append(f"prompts_dir is not a directory: {self.prompts_dir}")
        if not (0 <= self.tau <= 1):
            problems.append(f"tau must be in [0, 1], got {self.tau}")
        if not (0 <= self.theta <= 1):
            problems.append(f"theta must be in [0, 1], got {self.theta}")
        if self.form not in ("json", "structured", "natural"):
            problems.append(f"form must be json|structured|natural, got {self.form!r}")
        if self.concurrency < 1:
            problems.append(f"concurrency must be >= 1, got {self.concurrency}")
        if self.embeddings_limit is not None and self.embeddings_limit < 1:
            problems.append(f"embeddings_limit must be >= 1, got {self.embeddings_limit}")
        if self.mock_script is not None:
            if not Path(self.mock_script).is_file():
                problems.append(f"mock script not found: {self.mock_script}")
        else:
            for role, section in (("vlm", self.vlm), ("llm", self.llm)):
                if not section.get("endpoint"):
                    problems.append(f"backend section '{role}' needs an endpoint (or use a mock_script)")
                if not section.get("model"):
                    problems.append(f"backend section '{role}' needs a model id")
        for role, section in self.sampling.items():
            if role not in SAMPLING_ROLES:
                problems.append(f"unknown sampling role {role!r} (expected one of {SAMPLING_ROLES})")
                continue
            try:
                sampling_from_section(role, section)
            except (ValueError, TypeError) as exc:
                problems.append(f"sampling[{role}]: {exc}")
        if problems:
            raise ConfigError(problems)


def load_run_config(path: str | Path | None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Read the config document (if any) and apply flag overrides on top; flags win."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with Path(path).open("r", encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError([f"config file not found: {path}"]) from None
        except ValueError as exc:
            raise ConfigError([f"config file is not valid JSON: {exc}"]) from exc
        if not isinstance(data, dict):
            raise ConfigError(["config document must be a JSON object"])
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError([f"unknown config key {key!r}" for key in unknown])
    merged = dict(data)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    return RunConfig(**merged)


def backend_from_section(section: Mapping[str, Any], vision: bool) -> BackendConfig:
    return BackendConfig(
        endpoint=section["endpoint"],
        model=section["model"],
        credential_env=section.get("credential_env"),
        timeout_s=float(section.get("timeout_s", 60.0)),
        retries=int(section.get("retries", 2)),
        vision=bool(section.get("vision", vision)),
        concurrency=int(section.get("concurrency", 4)),
    )


def sampling_from_section(role: str, section: Mapping[str, Any]) -> SamplingParams:
    return SamplingParams(
        temperature=float(section.get("temperature", 0.7)),
        top_p=float(section.get("top_p", 0.8)),
        max_tokens=int(section.get("max_tokens", DEFAULT_MAX_TOKENS[role])),
    )
