"""Shared builders: random in-memory stores and the scripted MCQ scenario."""
from __future__ import annotations

import re
from typing import Dict, List

import numpy as np

from avmemory.backends import Scenario
from avmemory.consolidation import ThetaEvent, representative_embedding
from avmemory.encoding import EmbeddingRecord, ShortTermMemory, TextRecord
from avmemory.segmentation import TimeInterval
from avmemory.store import MemoryStore
from avmemory.synthetic import synthetic_bundle


def random_store(rng: np.random.Generator, n: int = None, dim: int = 8) -> MemoryStore:
    """Store with random, possibly overlapping or gapped, segments; a random
    subset is consolidated and carries ThetaEvents."""
    n = n or int(rng.integers(1, 25))
    store = MemoryStore(dim=dim)
    for i in range(n):
        start = float(np.round(rng.uniform(0, 120), 1))
        end = start + float(np.round(rng.uniform(0.5, 12), 1))
        iv = TimeInterval(start, end)
        sid = f"seg-{i:04d}"
        embs = [EmbeddingRecord(start, "image", rng.standard_normal(dim).astype(np.float32)),
                EmbeddingRecord((start + end) / 2, "audio", rng.standard_normal(dim).astype(np.float32))]
        texts = [TextRecord("visual", f"caption {sid}", start, start, f"content/{sid}/frame-000.pgm"),
                 TextRecord("transcript", f"speech {sid}", start, min(end, start + 1.0))]
        refs = [f"content/{sid}/frame-000.pgm", f"content/{sid}/audio.wav"]
        store.add_segment(ShortTermMemory(sid, iv, embs, texts, refs, {r: b"x" for r in refs}))
    ids = list(store.segments)
    keep = sorted(set([0] + [i for i in range(n) if rng.random() < 0.7]))
    store.consolidated = [ids[i] for i in keep]
    for sid in store.consolidated:
        m = store.segments[sid]
        store.theta_events[sid] = ThetaEvent(sid, representative_embedding(m.vectors()), f"summary {sid}",
                                             m.interval, m.visual_refs, m.audio_refs)
    return store


# --------------------------------------------------------------------------- MCQ fixture

SCENES = [
    ("a chef chops red onions on a wooden board", "a chef cooks in a home kitchen"),
    ("a golden retriever runs across a park lawn", "a dog plays fetch in a park"),
    ("a cyclist repairs a flat bicycle tyre", "someone fixes a bike in a garage"),
    ("a woman paints a blue lighthouse on canvas", "an artist paints a seaside picture"),
    ("two kids build a sandcastle at the beach", "children play on a sandy beach"),
    ("a man waters tomato plants in a greenhouse", "a gardener tends plants in a greenhouse"),
]

SPEECH = [
    (3.0, 5.0, "today we are making a spicy lentil soup"),
    (13.0, 15.0, "good boy, bring the orange frisbee back"),
    (24.0, 26.0, "you need a size fifteen wrench for this bolt"),
    (33.0, 35.0, "I always start with cobalt blue for the sky"),
    (44.0, 46.0, "let's put a seashell flag on the tallest tower"),
    (53.0, 55.0, "these tomatoes need water twice a day"),
]

OPTS = lambda a, b, c, d: {"A": a, "B": b, "C": c, "D": d}  # noqa: E731

# (id, category, question, options, answer, scene index)
QUESTIONS = [
    ("v1", "visual", "What vegetable is the chef chopping?", OPTS("carrots", "red onions", "garlic", "peppers"), "B", 0),
    ("v2", "visual", "What is the cyclist repairing?", OPTS("a chain", "a brake", "a flat tyre", "a bell"), "C", 2),
    ("v3", "visual", "What building does the woman paint?", OPTS("a lighthouse", "a barn", "a church", "a bridge"), "A", 3),
    ("a1", "audio", "Which soup does the cook say they are making?", OPTS("tomato", "chicken", "pea", "spicy lentil"), "D", 0),
    ("a2", "audio", "What colour frisbee does the owner mention?", OPTS("orange", "green", "white", "purple"), "A", 1),
    ("a3", "audio", "What wrench size is mentioned?", OPTS("ten", "twelve", "fifteen", "nineteen"), "C", 2),
    ("x1", "cross_modal", "While painting, which colour does the painter say she starts with?", OPTS("red", "cobalt blue", "black", "white"), "B", 3),
    ("x2", "cross_modal", "What do the kids plan to put on the sandcastle while building it?", OPTS("a seashell flag", "a crab", "a bucket", "a stick"), "A", 4),
    ("x3", "cross_modal", "While watering plants, how often does the man say they need water?", OPTS("once a week", "hourly", "twice a day", "never"), "C", 5),
    ("s1", "semantic", "What is the first part of the video mostly about?", OPTS("cooking", "cycling", "sports", "music"), "A", 0),
    ("s2", "semantic", "Which animal appears in the video?", OPTS("a cat", "a horse", "a parrot", "a dog"), "D", 1),
    ("s3", "semantic", "Where does the final scene take place?", OPTS("a garage", "a greenhouse", "a beach", "an office"), "B", 5),
]


def mcq_bundle():
    """60 s bundle, six visually distinct 10 s scenes, continuous loud audio."""
    return synthetic_bundle(60.0, [10, 20, 30, 40, 50], native_fps=2.0, seed=7)


def _q(text: str) -> str:
    return re.escape(text)


def mcq_scenario() -> Scenario:
    """Scripted backends whose answers only come out right when the engine
    routes each question and gathers the right evidence."""
    embeddings: Dict[str, object] = {}
    captions: Dict[str, str] = {}
    for scene, (caption, _) in enumerate(SCENES):
        for i in range(scene * 20, scene * 20 + 20):
            path = f"frames/{i:05d}.pgm"
            captions[path] = caption
            embeddings[path] = {"seed": f"scene-{scene}"}
    transcripts = [{"start": s, "end": e, "text": t} for s, e, t in SPEECH]

    completions: List[Dict[str, str]] = []
    for scene, (caption, summary) in enumerate(SCENES):
        completions.append({"pattern": r"\ATask: event summarization.*" + _q(caption), "response": summary + "."})

    label = {"visual": "VIDEO", "audio": "AUDIO", "cross_modal": "VIDEO+AUDIO", "semantic": "SUMMARY"}
    for qid, cat, text, opts, ans, scene in QUESTIONS:
        completions.append({"pattern": r"\ATask: query type classification.*Question: " + _q(text),
                            "response": label[cat]})
        caption, summary = SCENES[scene]
        start, end, speech = SPEECH[scene]
        if cat == "semantic":
            completions.append({"pattern": r"\ATask: answer from event summaries.*Question: " + _q(text)
                                + r".*" + _q(summary), "response": f"ANSWER: {ans}\nCONFIDENCE: 0.9"})
            continue
        if cat in ("visual", "cross_modal"):
            embeddings[text] = {"seed": f"scene-{scene}"}
        if cat == "audio":
            completions.append({"pattern": r"\ATask: audio segment selection.*Question: " + _q(text)
                                + r".*" + _q(speech),
                                "response": f'[{{"start": {start - 1}, "end": {end + 1}}}]'})
        needed = {"visual": [caption], "audio": [speech], "cross_modal": [caption, speech]}[cat]
        pattern = r"\ATask: final answer synthesis.*Question: " + _q(text) + r".*Retrieved content:"
        pattern += "".join(r"(?=.*" + _q(n) + ")" for n in needed)
        completions.append({"pattern": pattern, "response": f"Answer: {ans}"})
    return Scenario(embeddings=embeddings, transcripts=transcripts, captions=captions, completions=completions)


def mcq_question_dicts() -> List[Dict]:
    return [{"id": qid, "category": cat, "question": text, "options": opts, "answer": ans}
            for qid, cat, text, opts, ans, _ in QUESTIONS]
