"""Persistent memory store and exact cosine search.

On-disk layout::

    manifest.json        config, ordered ids, embedding row map, content list
    segments/<id>.json   interval, texts, content refs, embedding metadata
    theta/<id>.json      summary, temporal ref, key refs
    embeddings.bin       "HMEM" | u32 version=1 | u32 dim | u64 count | count*dim float32 LE
    content/...          retained key frames (.pgm) and audio slices (.wav)

ThetaEvent vectors are not written; they are recomputed on load as the mean of
the source segment's stored rows, which makes reloaded stores answer queries
exactly like the in-memory original.
"""
from __future__ import annotations

import json
import os
import shutil
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Tuple

import numpy as np

from .consolidation import ThetaEvent, cosine, representative_embedding
from .encoding import EmbeddingRecord, ShortTermMemory, TextRecord
from .errors import BadMagic, CorruptManifest, DimensionMismatch, SerializationError, StoreError, VersionMismatch
from .segmentation import TimeInterval

MAGIC = b"HMEM"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIQ")  # 20 bytes
ROW_DTYPE = np.dtype("<f4")


@dataclass(eq=False)
class MemoryStore:
    dim: int
    config: Dict = field(default_factory=dict)
    segments: Dict[str, ShortTermMemory] = field(default_factory=dict)
    consolidated: List[str] = field(default_factory=list)
    theta_events: Dict[str, ThetaEvent] = field(default_factory=dict)
    content: Dict[str, bytes] = field(default_factory=dict, repr=False)

    def add_segment(self, m: ShortTermMemory) -> None:
        for e in m.embeddings:
            if e.vector.shape != (self.dim,):
                raise DimensionMismatch(f"{m.id}: embedding dim {e.vector.shape[0]} != {self.dim}")
        self.segments[m.id] = m
        self.content.update(m.content)

    def consolidated_segments(self) -> List[ShortTermMemory]:
        return [self.segments[i] for i in self.consolidated]

    def thetas(self) -> List[ThetaEvent]:
        """ThetaEvents in temporal (consolidation) order."""
        return [self.theta_events[i] for i in self.consolidated if i in self.theta_events]

    def embedding_rows(self) -> List[Tuple[str, int, EmbeddingRecord]]:
        return [(sid, slot, rec) for sid, m in self.segments.items() for slot, rec in enumerate(m.embeddings)]

    def validate(self) -> None:
        missing = [i for i in self.consolidated if i not in self.segments]
        if missing:
            raise CorruptManifest(f"consolidated ids without segments: {missing}")
        orphans = [t.source_id for t in self.theta_events.values() if t.source_id not in self.consolidated]
        if orphans:
            raise CorruptManifest(f"theta events whose source is not consolidated: {orphans}")
        for m in self.segments.values():
            for ref in m.content_refs:
                if ref not in self.content:
                    raise CorruptManifest(f"{m.id}: content ref {ref} not in store")


# --------------------------------------------------------------------------- search

def top_k_similar(q, candidates: Iterable[Tuple[str, np.ndarray]], k: int) -> List[Tuple[str, float]]:
    """Exact cosine ranking; descending score, ties broken by ascending id."""
    if k < 1:
        raise ValueError("k must be at least 1")
    scored = [(cid, cosine(q, vec)) for cid, vec in candidates]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


# --------------------------------------------------------------------------- serialization

def _dump(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def embeddings_blob(store: MemoryStore) -> bytes:
    rows = store.embedding_rows()
    mat = np.zeros((len(rows), store.dim), dtype=ROW_DTYPE)
    for i, (_, _, rec) in enumerate(rows):
        mat[i] = rec.vector
    return HEADER.pack(MAGIC, FORMAT_VERSION, store.dim, len(rows)) + mat.tobytes()


def _segment_doc(m: ShortTermMemory) -> Dict:
    return {
        "id": m.id,
        "interval": m.interval.to_list(),
        "texts": [
            {"kind": t.kind, "text": t.text, "start_s": t.start_s, "end_s": t.end_s, "ref": t.ref}
            for t in m.texts
        ],
        "content_refs": list(m.content_refs),
        "embeddings": [
            {"slot": slot, "modality": e.modality, "timestamp_s": e.timestamp_s}
            for slot, e in enumerate(m.embeddings)
        ],
    }


def _theta_doc(t: ThetaEvent) -> Dict:
    return {
        "source_id": t.source_id,
        "summary": t.summary,
        "temporal_ref": t.temporal_ref.to_list(),
        "key_visual_refs": list(t.key_visual_refs),
        "key_audio_refs": list(t.key_audio_refs),
    }


def _write_tree(store: MemoryStore, root: Path) -> None:
    (root / "segments").mkdir()
    (root / "theta").mkdir()
    rows = []
    for row, (sid, slot, _) in enumerate(store.embedding_rows()):
        rows.append({"segment_id": sid, "slot": slot, "row": row})
    manifest = {
        "format": "hmem-store",
        "version": FORMAT_VERSION,
        "dim": store.dim,
        "config": store.config,
        "segments": list(store.segments),
        "consolidated": list(store.consolidated),
        "theta_events": [t.source_id for t in store.thetas()] + sorted(set(store.theta_events) - set(store.consolidated)),
        "embeddings": {
            "file": "embeddings.bin",
            "header_bytes": HEADER.size,
            "row_bytes": store.dim * ROW_DTYPE.itemsize,
            "count": len(rows),
            "rows": rows,
        },
        "content": sorted(store.content),
    }
    (root / "manifest.json").write_bytes(_dump(manifest))
    for sid, m in store.segments.items():
        (root / "segments" / f"{sid}.json").write_bytes(_dump(_segment_doc(m)))
    for sid, t in store.theta_events.items():
        (root / "theta" / f"{sid}.json").write_bytes(_dump(_theta_doc(t)))
    (root / "embeddings.bin").write_bytes(embeddings_blob(store))
    for ref, data in store.content.items():
        target = root / ref
        if Path(ref).is_absolute() or ".." in Path(ref).parts:
            raise SerializationError(f"content ref escapes the store: {ref}")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)


def save(store: MemoryStore, path) -> Path:
    """Write the store atomically: build a sibling temp directory, then swap it in."""
    dest = Path(path).resolve()
    dest.parent.mkdir(parents=True, exist_ok=True)
    try:
        store.validate()
    except CorruptManifest as exc:
        raise SerializationError(str(exc)) from exc
    tmp = Path(tempfile.mkdtemp(prefix=f".{dest.name}.tmp-", dir=dest.parent))
    try:
        _write_tree(store, tmp)
        if dest.exists():
            backup = dest.parent / f".{dest.name}.old-{os.getpid()}"
            os.rename(dest, backup)
            os.rename(tmp, dest)
            shutil.rmtree(backup, ignore_errors=True)
        else:
            os.rename(tmp, dest)
    except OSError as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        raise StoreError(f"cannot write store at {dest}: {exc}") from exc
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return dest


def read_embeddings(data: bytes, expected_dim: int | None = None) -> np.ndarray:
    if len(data) < HEADER.size:
        raise BadMagic("embeddings file shorter than its header")
    magic, version, dim, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"embeddings version {version}, expected {FORMAT_VERSION}")
    if expected_dim is not None and dim != expected_dim:
        raise DimensionMismatch(f"embeddings dim {dim}, manifest says {expected_dim}")
    body = data[HEADER.size:]
    if len(body) != count * dim * ROW_DTYPE.itemsize:
        raise CorruptManifest("embeddings.bin size does not match its header")
    return np.frombuffer(body, dtype=ROW_DTYPE).reshape(count, dim).astype(np.float32)


def load(path) -> MemoryStore:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise StoreError(f"no store at {root}") from exc
    except ValueError as exc:
        raise CorruptManifest(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"manifest version {manifest.get('version')}")
    try:
        dim = int(manifest["dim"])
        emb = manifest["embeddings"]
        matrix = read_embeddings((root / emb["file"]).read_bytes(), dim)
        if matrix.shape[0] != emb["count"]:
            raise CorruptManifest("embedding count mismatch")
        row_of = {(r["segment_id"], r["slot"]): r["row"] for r in emb["rows"]}

        store = MemoryStore(dim=dim, config=manifest.get("config", {}))
        for ref in manifest.get("content", []):
            store.content[ref] = (root / ref).read_bytes()
        for sid in manifest["segments"]:
            doc = json.loads((root / "segments" / f"{sid}.json").read_text(encoding="utf-8"))
            embeddings = [
                EmbeddingRecord(e["timestamp_s"], e["modality"], matrix[row_of[(sid, e["slot"])]].copy())
                for e in doc["embeddings"]
            ]
            texts = [TextRecord(t["kind"], t["text"], t["start_s"], t["end_s"], t.get("ref")) for t in doc["texts"]]
            store.segments[sid] = ShortTermMemory(
                sid, TimeInterval(*doc["interval"]), embeddings, texts, list(doc["content_refs"]))
        store.consolidated = list(manifest["consolidated"])
        for sid in manifest["theta_events"]:
            doc = json.loads((root / "theta" / f"{sid}.json").read_text(encoding="utf-8"))
            src = store.segments.get(doc["source_id"])
            if src is None:
                raise CorruptManifest(f"theta {sid} points at unknown segment {doc['source_id']}")
            store.theta_events[sid] = ThetaEvent(
                source_id=doc["source_id"],
                v=representative_embedding(src.vectors()),
                summary=doc["summary"],
                temporal_ref=TimeInterval(*doc["temporal_ref"]),
                key_visual_refs=list(doc["key_visual_refs"]),
                key_audio_refs=list(doc["key_audio_refs"]),
            )
    except FileNotFoundError as exc:
        raise CorruptManifest(f"manifest references a missing file: {exc.filename}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (DimensionMismatch, StoreError)):
            raise
        raise CorruptManifest(f"malformed store: {exc!r}") from exc
    store.validate()
    return store


def export_embeddings(store: MemoryStore, out_path) -> int:
    """Write one JSON line per stored embedding; returns the line count."""
    n = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for sid, slot, rec in store.embedding_rows():
            line = {
                "segment_id": sid,
                "slot": slot,
                "modality": rec.modality,
                "timestamp_s": rec.timestamp_s,
                "vector": [float(x) for x in rec.vector],
            }
            fh.write(json.dumps(line) + "\n")
            n += 1
    return n
