"""Command-line entry points: run, graph, sweep, cache.

Every flag has a config-file twin and flags win, so sweeps and ablations can
mutate one knob against a stable base document. All output files land under
--out-dir and are written atomically; timestamps and other volatile run data
go to the manifest, never into result files, keeping reruns byte-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from .backends import CacheStore, ChatBackend, HttpChatBackend, MockChatBackend
from .config import ConfigError, RunConfig, backend_from_section, load_run_config, sampling_from_section
from .embeddings import load_embedding_table
from .evaluation import Sample, load_dataset, sweep
from .grounding import load_detections
from .pipeline import Pipeline, RunResult
from .prompts import PromptLibrary, default_library
from .query_analysis import default_categories, load_categories
from .scene_graph import SerialForm, serialize

__all__ = ["main", "build_parser"]

log = logging.getLogger(__name__)


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _dump(record: object) -> str:
    return json.dumps(record, ensure_ascii=False)


def _make_backends(cfg: RunConfig) -> tuple[ChatBackend, ChatBackend]:
    if cfg.mock_script is not None:
        return (
            MockChatBackend.from_file(cfg.mock_script, model="mock-vlm"),
            MockChatBackend.from_file(cfg.mock_script, model="mock-llm"),
        )
    vlm_cfg = backend_from_section(cfg.vlm, vision=True)
    llm_cfg = backend_from_section(cfg.llm, vision=False)
    return HttpChatBackend(vlm_cfg), HttpChatBackend(llm_cfg)


def _build_pipeline(cfg: RunConfig) -> tuple[Pipeline, list[Sample]]:
    cfg.validate()
    samples = load_dataset(cfg.dataset, cfg.split)
    detections = load_detections(cfg.detections)
    table = load_embedding_table(cfg.embeddings, limit=cfg.embeddings_limit)
    categories = load_categories(cfg.categories) if cfg.categories else list(default_categories())
    library = PromptLibrary.load(cfg.prompts_dir) if cfg.prompts_dir else default_library()
    vlm, llm = _make_backends(cfg)
    sampling = {role: sampling_from_section(role, section) for role, section in cfg.sampling.items()}
    pipeline = Pipeline(
        table=table,
        categories=categories,
        detections=detections,
        vlm=vlm,
        llm=llm,
        store=CacheStore(cfg.cache_dir),
        images_root=cfg.images_root,
        library=library,
        tau=cfg.tau,
        theta=cfg.theta,
        min_category_sim=cfg.min_category_sim,
        selection_fallback=cfg.selection_fallback,
        form=SerialForm(cfg.form),
        sampling=sampling,
        word_cap=cfg.word_cap,
        stroke_width=cfg.stroke_width,
    )
    return pipeline, samples


def _config_echo(cfg: RunConfig, pipeline: Pipeline) -> dict:
    return {
        "dataset": cfg.dataset,
        "split": cfg.split,
        "detections": cfg.detections,
        "tau": cfg.tau,
        "theta": cfg.theta,
        "min_category_sim": cfg.min_category_sim,
        "selection_fallback": cfg.selection_fallback,
        "form": cfg.form,
        "sampling": {
            role: {"temperature": p.temperature, "top_p": p.top_p, "max_tokens": p.max_tokens}
            for role, p in sorted(pipeline.sampling.items())
        },
        "backends": {"vlm": pipeline.vlm.model_id, "llm": pipeline.llm.model_id},
    }


def _report_document(cfg: RunConfig, pipeline: Pipeline, result: RunResult) -> dict:
    return {
        "config": _config_echo(cfg, pipeline),
        "report": result.report.to_record(),
        "coverage": {
            "raw": asdict(result.coverage_raw),
            "after_filter": asdict(result.coverage_filtered),
        },
    }


def _report_text(doc: dict) -> str:
    report = doc["report"]
    lines = [
        f"split {report['split']}: {report['correct']}/{report['count']} correct "
        f"({report['accuracy']:.2f}%), mean IoU {report['mean_iou']:.4f}, "
        f"{report['fallback_count']} fallback prediction(s)",
        f"coverage: raw {doc['coverage']['raw']['percent']:.2f}%, "
        f"after filter {doc['coverage']['after_filter']['percent']:.2f}%",
    ]
    for name, bucket in report.get("buckets", {}).items():
        lines.append(
            f"  bucket {name}: {bucket['correct']}/{bucket['count']} ({bucket['accuracy']:.2f}%)"
        )
    return "\n".join(lines) + "\n"


def _write_run_outputs(cfg: RunConfig, pipeline: Pipeline, result: RunResult, started: float) -> None:
    out_dir = Path(cfg.out_dir)
    records = "\n".join(_dump(o.to_record()) for o in result.outcomes) + "\n"
    _write_atomic(out_dir / "results.jsonl", records)
    for outcome in result.outcomes:
        if outcome.graph is not None:
            _write_atomic(out_dir / "graphs" / f"{outcome.sample.query_id}.json", serialize(outcome.graph) + "\n")
    doc = _report_document(cfg, pipeline, result)
    _write_atomic(out_dir / "report.json", json.dumps(doc, ensure_ascii=False, indent=2) + "\n")
    _write_atomic(out_dir / "report.txt", _report_text(doc))
    manifest = {
        "started_unix": started,
        "finished_unix": time.time(),
        "duration_s": time.time() - started,
        "samples": len(result.outcomes),
        "failures": [
            {"query_id": o.sample.query_id, "error": o.error} for o in result.failures
        ],
        "backend_calls": result.backend_calls,
        "store_hits": result.store_hits,
        "store_misses": result.store_misses,
        "cache_dir": cfg.cache_dir,
    }
    _write_atomic(out_dir / "manifest.json", json.dumps(manifest, ensure_ascii=False, indent=2) + "\n")


def cmd_run(cfg: RunConfig) -> int:
    started = time.time()
    pipeline, samples = _build_pipeline(cfg)
    result = pipeline.run_split(samples, concurrency=cfg.concurrency)
    _write_run_outputs(cfg, pipeline, result, started)
    print(_report_text(_report_document(cfg, pipeline, result)), end="")
    failures = result.failures
    if failures:
        log.error("%d of %d samples failed", len(failures), len(result.outcomes))
        return 1
    return 0


def cmd_graph(cfg: RunConfig, query_id: str) -> int:
    pipeline, samples = _build_pipeline(cfg)
    matches = [s for s in samples if s.query_id == query_id]
    if not matches:
        log.error("unknown sample id %r in split %r", query_id, cfg.split)
        return 2
    graph_json, fallback = pipeline.graph_json(matches[0])
    if fallback:
        print(f"note: selection fell back to all detections for {query_id}", file=sys.stderr)
    print(graph_json)
    return 0


def cmd_sweep(cfg: RunConfig, parameter: str, values: list[float]) -> int:
    pipeline, samples = _build_pipeline(cfg)

    def run_at(value: float) -> RunResult:
        knobs = {"tau": cfg.tau, "theta": cfg.theta}
        knobs[parameter] = value
        swept = Pipeline(
            table=pipeline.table,
            categories=pipeline.categories,
            detections=pipeline.detections,
            vlm=pipeline.vlm,
            llm=pipeline.llm,
            store=pipeline.store,
            images_root=pipeline.images_root,
            tagger=pipeline.tagger,
            library=pipeline.library,
            tau=knobs["tau"],
            theta=knobs["theta"],
            min_category_sim=pipeline.min_category_sim,
            selection_fallback=pipeline.selection_cfg.fallback_to_all,
            form=pipeline.form,
            sampling=pipeline.sampling,
            word_cap=pipeline.word_cap,
            stroke_width=pipeline.stroke_width,
        )
        return swept.run_split(samples, concurrency=cfg.concurrency)

    rows = sweep(parameter, values, run_at)
    doc = {
        "parameter": parameter,
        "rows": [
            {
                "value": value,
                "report": result.report.to_record(),
                "mean_nodes": (
                    sum(o.node_count for o in result.outcomes) / len(result.outcomes)
                    if result.outcomes
                    else 0.0
                ),
            }
            for value, result in rows
        ],
    }
    out_path = Path(cfg.out_dir) / f"sweep_{parameter}.json"
    _write_atomic(out_path, json.dumps(doc, ensure_ascii=False, indent=2) + "\n")
    for row in doc["rows"]:
        print(
            f"{parameter}={row['value']}: accuracy {row['report']['accuracy']:.2f}% "
            f"({row['report']['correct']}/{row['report']['count']}), mean nodes {row['mean_nodes']:.2f}"
        )
    return 0


def cmd_cache(cfg: RunConfig, action: str) -> int:
    store = CacheStore(cfg.cache_dir)
    if action == "stats":
        stats = store.stats()
        print(f"entries: {stats.entries}")
        print(f"total_bytes: {stats.total_bytes}")
        return 0
    removed = store.purge()
    print(f"purged: {removed}")
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config document; flags override its keys")
    parser.add_argument("--dataset")
    parser.add_argument("--split")
    parser.add_argument("--detections")
    parser.add_argument("--images-root", dest="images_root")
    parser.add_argument("--embeddings")
    parser.add_argument("--embeddings-limit", dest="embeddings_limit", type=int)
    parser.add_argument("--categories")
    parser.add_argument("--tau", type=float)
    parser.add_argument("--theta", type=float)
    parser.add_argument("--min-category-sim", dest="min_category_sim", type=float)
    parser.add_argument(
        "--selection-fallback",
        dest="selection_fallback",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="return all detections (flagged) when nothing clears tau; --no-selection-fallback for strict behavior",
    )
    parser.add_argument("--form", choices=["json", "structured", "natural"])
    parser.add_argument("--mock-script", dest="mock_script")
    parser.add_argument("--cache-dir", dest="cache_dir")
    parser.add_argument("--out-dir", dest="out_dir")
    parser.add_argument("--concurrency", type=int)
    parser.add_argument("--prompts-dir", dest="prompts_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refgraph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the full pipeline over a split")
    _add_config_flags(run_p)

    graph_p = sub.add_parser("graph", help="print one sample's scene graph as JSON")
    _add_config_flags(graph_p)
    graph_p.add_argument("query_id")

    sweep_p = sub.add_parser("sweep", help="re-run while varying tau or theta")
    _add_config_flags(sweep_p)
    sweep_p.add_argument("--parameter", choices=["tau", "theta"], required=True)
    sweep_p.add_argument("--values", required=True, help="comma-separated values, e.g. 0.3,0.4,0.5")

    cache_p = sub.add_parser("cache", help="inspect or purge the response cache")
    _add_config_flags(cache_p)
    cache_p.add_argument("action", choices=["stats", "purge"])
    return parser


_OVERRIDE_KEYS = (
    "dataset",
    "split",
    "detections",
    "images_root",
    "embeddings",
    "embeddings_limit",
    "categories",
    "tau",
    "theta",
    "min_category_sim",
    "selection_fallback",
    "form",
    "mock_script",
    "cache_dir",
    "out_dir",
    "concurrency",
    "prompts_dir",
)


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    overrides = {key: getattr(args, key) for key in _OVERRIDE_KEYS}
    try:
        cfg = load_run_config(args.config, overrides)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "graph":
            return cmd_graph(cfg, args.query_id)
        if args.command == "sweep":
            values = [float(v) for v in args.values.split(",") if v.strip()]
            if not values:
                raise ConfigError(["--values must list at least one number"])
            return cmd_sweep(cfg, args.parameter, values)
        return cmd_cache(cfg, args.action)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
