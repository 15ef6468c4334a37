"""Multiple-choice benchmark scoring and event-integrity evaluation."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .backends import BackendSuite
from .errors import EmptyGroundTruth, EmptyQuestionSet, MemoryEngineError
from .retrieval import LETTERS, Query, RetrievalConfig, RetrievalResult, retrieve
from .segmentation import TimeInterval, event_integrity_rate, fixed_windows
from .store import MemoryStore

logger = logging.getLogger(__name__)

CATEGORIES = ("cross_modal", "audio", "visual", "semantic")


@dataclass(frozen=True)
class McqQuestion:
    id: str
    category: str
    question: str
    options: Dict[str, str]
    answer: str

    @classmethod
    def from_dict(cls, d: Dict) -> "McqQuestion":
        options = d["options"]
        if isinstance(options, list):
            options = dict(zip(LETTERS, options))
        options = {str(k).upper(): str(v) for k, v in options.items()}
        if sorted(options) != list(LETTERS):
            raise ValueError("exactly four options A-D are required")
        answer = str(d["answer"]).strip().upper()
        if answer not in LETTERS:
            raise ValueError(f"answer {answer!r} is not one of A-D")
        category = str(d["category"])
        if category not in CATEGORIES:
            raise ValueError(f"unknown category {category!r}")
        text = str(d["question"]).strip()
        if not text:
            raise ValueError("empty question")
        return cls(str(d.get("id", "")), category, text, options, answer)

    def query(self) -> Query:
        return Query(self.question, self.options)


def load_questions(path) -> Tuple[List[McqQuestion], List[Dict]]:
    """Parse a JSON-lines question file; returns (questions, malformed-line reports)."""
    questions, bad = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            q = McqQuestion.from_dict(json.loads(line))
            if not q.id:
                q = McqQuestion(f"q{lineno}", q.category, q.question, q.options, q.answer)
            questions.append(q)
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            bad.append({"line": lineno, "error": str(exc)})
            logger.warning("question line %d skipped: %s", lineno, exc)
    return questions, bad


def evaluate(questions: Sequence[McqQuestion], store: MemoryStore, suite: BackendSuite,
             cfg: RetrievalConfig = RetrievalConfig(), workers: int = 1,
             malformed: Optional[List[Dict]] = None) -> Dict:
    """Strict letter-match accuracy, overall and per category."""
    if not questions:
        raise EmptyQuestionSet("no valid questions to evaluate")

    def run(q: McqQuestion):
        try:
            return retrieve(q.query(), store, suite, cfg), None
        except MemoryEngineError as exc:
            return None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, questions))
    else:
        outcomes = [run(q) for q in questions]

    per_cat = {c: {"count": 0, "correct": 0} for c in CATEGORIES}
    rows = []
    correct = fast = 0
    elapsed = []
    for q, (res, err) in zip(questions, outcomes):
        res: Optional[RetrievalResult]
        ok = res is not None and res.answer == q.answer
        per_cat[q.category]["count"] += 1
        per_cat[q.category]["correct"] += int(ok)
        correct += int(ok)
        if res is not None:
            fast += int(res.pathway == "fast")
            elapsed.append(res.elapsed_ms)
        rows.append({
            "id": q.id,
            "category": q.category,
            "expected": q.answer,
            "predicted": res.answer if res else None,
            "correct": ok,
            "pathway": res.pathway if res else None,
            "confidence": res.confidence if res else None,
            "error": err,
            "elapsed_ms": res.elapsed_ms if res else None,
        })

    for c in per_cat.values():
        c["accuracy"] = c["correct"] / c["count"] if c["count"] else None
    n = len(questions)
    return {
        "total": n,
        "correct": correct,
        "accuracy": correct / n,
        "per_category": per_cat,
        "mean_art_ms": sum(elapsed) / len(elapsed) if elapsed else None,
        "fast_path_fraction": fast / n,
        "malformed_lines": list(malformed or []),
        "results": rows,
    }


def strip_timings(report: Dict) -> Dict:
    """Copy of a report without wall-clock fields, for golden comparisons."""
    out = {k: v for k, v in report.items() if k not in ("mean_art_ms", "wall_time_s")}
    if "results" in out:
        out["results"] = [{k: v for k, v in r.items() if k != "elapsed_ms"} for r in out["results"]]
    return out


def load_annotations(path) -> List[TimeInterval]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list) or not data:
        raise EmptyGroundTruth(f"{path} holds no events")
    return [TimeInterval(float(e["start_s"]), float(e["end_s"])) for e in data]


def load_segments_file(path) -> List[TimeInterval]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [TimeInterval(float(e["start_s"]), float(e["end_s"])) if isinstance(e, dict)
            else TimeInterval(float(e[0]), float(e[1])) for e in data]


def eir_report(segments: Sequence[TimeInterval], events: Sequence[TimeInterval],
               fixed_window_s: Optional[float] = None) -> Dict:
    report = {
        "events": len(events),
        "segments": len(segments),
        "adaptive_eir": event_integrity_rate(segments, events),
    }
    if fixed_window_s:
        duration = max(s.end_s for s in segments)
        report["fixed_window_s"] = fixed_window_s
        report["fixed_eir"] = event_integrity_rate(fixed_windows(duration, fixed_window_s), events)
    return report
