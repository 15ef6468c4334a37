"""Command line interface.

Exit codes: 0 success, 1 evaluation/answer failure, 2 environment or I/O failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import store as store_mod
from .backends import BackendUnavailable, Scenario, Timeout, serve_stub, stub_suite
from .config import EngineConfig
from .errors import (
    BundleNotFound,
    ConfigError,
    InvalidBundle,
    MemoryEngineError,
    StageError,
    StoreError,
)
from .evaluation import eir_report, evaluate, load_annotations, load_questions, load_segments_file
from .media import load_bundle
from .pipeline import ingest
from .retrieval import Query, retrieve

logger = logging.getLogger("avmemory")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_ENV = 2

_ENV_ERRORS = (StoreError, BundleNotFound, InvalidBundle, ConfigError, OSError, BackendUnavailable, Timeout)


def parse_choices(raw: str) -> Dict[str, str]:
    """``"A:red,B:blue,C:green,D:black"`` -> ``{"A": "red", ...}``."""
    parts = re.split(r",\s*(?=[A-Da-d]\s*:)", raw.strip())
    out = {}
    for part in parts:
        letter, sep, text = part.partition(":")
        if not sep or letter.strip().upper() not in "ABCD" or len(letter.strip()) != 1:
            raise ValueError(f"bad choice {part!r}; expected LETTER:text")
        out[letter.strip().upper()] = text.strip()
    return out


def _config(args) -> EngineConfig:
    cfg = EngineConfig.load(args.config) if args.config else EngineConfig()
    if getattr(args, "scenario", None):
        cfg.scenario = str(Path(args.scenario).resolve())
        cfg.backend = "stub"
    if args.workers:
        cfg.workers = args.workers
    return cfg


def _need_store(args) -> Path:
    if not args.store:
        raise ConfigError("--store is required")
    return Path(args.store)


def cmd_ingest(args) -> int:
    cfg = _config(args)
    bundle = load_bundle(args.bundle)
    report = ingest(bundle, cfg.build_suite(), _need_store(args), cfg, cfg.workers)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_query(args) -> int:
    cfg = _config(args)
    memory = store_mod.load(_need_store(args))
    query = Query(args.question, parse_choices(args.choices) if args.choices else None)
    result = retrieve(query, memory, cfg.build_suite(), cfg.retrieval())
    if args.json:
        print(json.dumps(result.to_dict(), indent=2))
    else:
        print(f"answer: {result.answer}")
        print(f"pathway: {result.pathway}")
        print(f"confidence: {result.confidence:.3f}")
        print(f"query_type: {result.query_type.value}")
        print(f"elapsed_ms: {result.elapsed_ms:.1f}")
        print("evidence:")
        for e in result.evidence:
            print(f"  {e.segment_id} {e.modality} [{e.interval.start_s:.2f}-{e.interval.end_s:.2f}] {e.excerpt}")
    return EXIT_OK if result.answer != "NONE" else EXIT_FAIL


def cmd_eval(args) -> int:
    cfg = _config(args)
    memory = store_mod.load(_need_store(args))
    questions, bad = load_questions(args.questions)
    report = evaluate(questions, memory, cfg.build_suite(), cfg.retrieval(), cfg.workers, bad)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_eval_eir(args) -> int:
    if args.segments:
        segments = load_segments_file(args.segments)
    else:
        memory = store_mod.load(_need_store(args))
        segments = [m.interval for m in memory.segments.values()]
    events = load_annotations(args.annotations)
    print(json.dumps(eir_report(segments, events, args.fixed_window), indent=2))
    return EXIT_OK


def cmd_export(args) -> int:
    memory = store_mod.load(_need_store(args))
    n = store_mod.export_embeddings(memory, args.out)
    logger.info("wrote %d embeddings to %s", n, args.out)
    return EXIT_OK


def cmd_serve_stub(args) -> int:
    cfg = _config(args)
    scenario = Scenario.load(cfg.scenario) if cfg.scenario else Scenario()
    serve_stub(stub_suite(scenario, cfg.dim), args.host, args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON engine config")
    common.add_argument("--store", help="memory store directory")
    common.add_argument("--workers", type=int, help="worker pool size (default min(cores, 8))")
    common.add_argument("--scenario", help="stub backend scenario JSON (forces stub backends)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="avmemory", description="Episodic audiovisual memory engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="build a memory store from a media bundle")
    p.add_argument("bundle", help="bundle directory containing bundle.json")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("query", parents=[common], help="answer one question from a store")
    p.add_argument("question")
    p.add_argument("--choices", help='multiple choice options, e.g. "A:red,B:blue,C:green,D:black"')
    p.add_argument("--json", action="store_true", help="print the full result as JSON")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", parents=[common], help="score a JSON-lines multiple-choice question file")
    p.add_argument("questions")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("eval-eir", parents=[common], help="event integrity rate of a segmentation")
    p.add_argument("annotations", help="JSON list of {start_s, end_s, label}")
    p.add_argument("--segments", help="JSON list of segments instead of --store")
    p.add_argument("--fixed-window", type=float, help="also score fixed chunks of this many seconds")
    p.set_defaults(func=cmd_eval_eir)

    p = sub.add_parser("export-embeddings", parents=[common], help="dump stored embeddings as JSON lines")
    p.add_argument("out")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("serve-stub", parents=[common], help="serve stub backends over the HTTP wire protocol")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_serve_stub)
    return parser


def exit_code_for(exc: BaseException) -> int:
    root = exc.cause if isinstance(exc, StageError) else exc
    return EXIT_ENV if isinstance(root, _ENV_ERRORS) else EXIT_FAIL


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MemoryEngineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV


if __name__ == "__main__":
    sys.exit(main())
