"""Reading and writing corpora on disk.

Layout, all paths relative to the manifest::

    manifest.json        {"dim", "queries", "judgments", "videos",
                          "embeddings", "embeddings_index", "descriptions"?}
    queries.jsonl        {"id", "text", "language"?, "category"?}
    judgments.jsonl      {"query_id", "relevant": [...], "language"?, "category"?}
    videos.jsonl         {"id", "has_audio", "total_frames"?, "frame_ref_template"?,
                          "audio_ref"?, "frame_indices"?}
    embeddings.bin       little-endian float32, frames of all videos back to back
    embeddings.json      {video_id: {"offset": bytes, "frame_count": n, "dim": d}}
    descriptions.jsonl   optional precomputed description sets
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .model import (
    Corpus,
    DescriptionSet,
    InvalidInputError,
    QueryRecord,
    RelevanceJudgments,
    VideoRecord,
)

FLOAT_LE = np.dtype("<f4")
LABEL_KEYS = ("language", "category")


def dumps(obj) -> str:
    """Canonical JSON used for every artifact so reruns are byte-identical."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from exc


def write_jsonl(path: str | Path, records: Iterable[Mapping]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec))
            fh.write("\n")


def write_json(path: str | Path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def query_to_dict(q: QueryRecord) -> dict:
    return _drop_none({"id": q.id, "text": q.text, "language": q.language, "category": q.category})


def load_queries(path) -> list[QueryRecord]:
    return [
        QueryRecord(r["id"], r["text"], r.get("language"), r.get("category")) for r in read_jsonl(path)
    ]


def load_judgments(path) -> RelevanceJudgments:
    relevant: dict[str, set[str]] = {}
    labels: dict[str, dict[str, str]] = {}
    for r in read_jsonl(path):
        qid = r["query_id"]
        relevant.setdefault(qid, set()).update(r.get("relevant", []))
        lab = {k: r[k] for k in LABEL_KEYS if r.get(k) is not None}
        if lab:
            labels.setdefault(qid, {}).update(lab)
    return RelevanceJudgments(relevant, labels)


def judgments_to_records(j: RelevanceJudgments) -> list[dict]:
    out = []
    for qid, rel in j.relevant.items():
        rec = {"query_id": qid, "relevant": sorted(rel)}
        rec.update(j.labels.get(qid, {}))
        out.append(rec)
    return out


def load_embeddings(bin_path, index_path) -> dict[str, np.ndarray]:
    index = json.loads(Path(index_path).read_text(encoding="utf-8"))
    raw = Path(bin_path).read_bytes()
    out = {}
    for vid, entry in index.items():
        offset, n, dim = int(entry["offset"]), int(entry["frame_count"]), int(entry["dim"])
        nbytes = n * dim * FLOAT_LE.itemsize
        if offset < 0 or offset + nbytes > len(raw):
            raise InvalidInputError(f"embedding slice for {vid!r} is out of bounds")
        arr = np.frombuffer(raw, dtype=FLOAT_LE, count=n * dim, offset=offset)
        out[vid] = arr.reshape(n, dim).astype(np.float32)
    return out


def save_embeddings(videos: Iterable[VideoRecord], bin_path, index_path) -> None:
    index = {}
    chunks = []
    offset = 0
    for v in videos:
        data = np.ascontiguousarray(v.frame_embeddings, dtype=FLOAT_LE).tobytes()
        index[v.id] = {"offset": offset, "frame_count": v.frame_count, "dim": v.dim}
        chunks.append(data)
        offset += len(data)
    Path(bin_path).write_bytes(b"".join(chunks))
    write_json(index_path, index)


def load_corpus(manifest_path: str | Path) -> Corpus:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    root = manifest_path.parent

    def p(key):
        return root / manifest[key]

    queries = load_queries(p("queries"))
    judgments = load_judgments(p("judgments"))
    embeddings = load_embeddings(p("embeddings"), p("embeddings_index"))
    videos = []
    for r in read_jsonl(p("videos")):
        vid = r["id"]
        if vid not in embeddings:
            raise InvalidInputError(f"video {vid!r} has no embeddings in the index")
        videos.append(
            VideoRecord(
                id=vid,
                frame_embeddings=embeddings[vid],
                has_audio=bool(r.get("has_audio", False)),
                total_frames=r.get("total_frames"),
                frame_ref_template=r.get("frame_ref_template"),
                audio_ref=r.get("audio_ref"),
                frame_indices=r.get("frame_indices"),
            )
        )
    descriptions = None
    if manifest.get("descriptions"):
        descriptions = {
            d.video_id: d for d in (DescriptionSet.from_dict(r) for r in read_jsonl(p("descriptions")))
        }
    return Corpus(tuple(queries), tuple(videos), judgments, descriptions, manifest.get("dim"))


def save_corpus(corpus: Corpus, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "dim": corpus.dim,
        "queries": "queries.jsonl",
        "judgments": "judgments.jsonl",
        "videos": "videos.jsonl",
        "embeddings": "embeddings.bin",
        "embeddings_index": "embeddings.json",
    }
    write_jsonl(directory / "queries.jsonl", (query_to_dict(q) for q in corpus.queries))
    write_jsonl(directory / "judgments.jsonl", judgments_to_records(corpus.judgments))
    write_jsonl(
        directory / "videos.jsonl",
        (
            _drop_none(
                {
                    "id": v.id,
                    "has_audio": v.has_audio,
                    "total_frames": v.total_frames,
                    "frame_ref_template": v.frame_ref_template,
                    "audio_ref": v.audio_ref,
                    "frame_indices": list(v.frame_indices) if v.frame_indices is not None else None,
                }
            )
            for v in corpus.videos
        ),
    )
    save_embeddings(corpus.videos, directory / "embeddings.bin", directory / "embeddings.json")
    if corpus.descriptions is not None:
        manifest["descriptions"] = "descriptions.jsonl"
        write_jsonl(
            directory / "descriptions.jsonl",
            (corpus.descriptions[vid].to_dict() for vid in sorted(corpus.descriptions)),
        )
    path = directory / "manifest.json"
    write_json(path, manifest)
    return path
