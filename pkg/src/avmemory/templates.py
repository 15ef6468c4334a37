"""Prompt templates shipped as text assets under ``avmemory/prompts``.

Placeholders use ``string.Template`` syntax:

=====================  ==========================================================
template               placeholders
=====================  ==========================================================
semantic_replay        descriptions, transcription
query_classification   question
fast_answer            question, summaries
frame_selection        question, element, frames
audio_selection        question, transcripts
reflection             question, fast_answer, fast_confidence, detailed_answer,
                       captions, transcripts
final_answer           question, context, evidence
=====================  ==========================================================
"""
from __future__ import annotations

from functools import lru_cache
from importlib import resources
from string import Template

TEMPLATE_VERSION = 1
NAMES = (
    "semantic_replay",
    "query_classification",
    "fast_answer",
    "frame_selection",
    "audio_selection",
    "reflection",
    "final_answer",
)


@lru_cache(maxsize=None)
def load(name: str) -> Template:
    if name not in NAMES:
        raise KeyError(name)
    text = resources.files("avmemory").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")
    return Template(text)


def render(name: str, **fields) -> str:
    return load(name).substitute(**fields)
