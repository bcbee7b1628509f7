"""Domain records shared across the retrieval engine.

Everything here is immutable once built. Numeric payloads are stored as
read-only numpy arrays so records can be handed to worker threads freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

NORM_TOLERANCE = 1e-6
EVENT_CAP = 5


class InvalidInputError(ValueError):
    """Raised when an operation receives data violating its preconditions."""


class EventKind(str, Enum):
    PREQUEL = "prequel"
    CURRENT = "current"
    SEQUEL = "sequel"


class ComponentKind(str, Enum):
    QUERY_VIDEO = "query_video"
    QUERY_DESC = "query_desc"
    PREQUEL_DESC = "prequel_desc"
    CURRENT_DESC = "current_desc"
    SEQUEL_DESC = "sequel_desc"

    @classmethod
    def for_event(cls, kind: EventKind) -> "ComponentKind":
        return cls(f"{EventKind(kind).value}_desc")


ALL_COMPONENTS: tuple[ComponentKind, ...] = tuple(ComponentKind)


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class QueryRecord:
    id: str
    text: str
    language: str | None = None
    category: str | None = None

    def __post_init__(self):
        if not self.id:
            raise InvalidInputError("query id must be non-empty")
        if not self.text or not self.text.strip():
            raise InvalidInputError(f"query {self.id!r} has empty text")


@dataclass(frozen=True)
class EventDecomposition:
    """Prequel/current/sequel events for one query plus their refined forms.

    Lists are empty only before decomposition has run. ``warnings`` collects
    degradations (failed parses, fallbacks) so they end up in run artifacts.
    """

    prequel: tuple[str, ...] = ()
    current: tuple[str, ...] = ()
    sequel: tuple[str, ...] = ()
    primary_event: str | None = None
    place: str | None = None
    time: str | None = None
    refined_prequel: tuple[str, ...] = ()
    refined_current: tuple[str, ...] = ()
    refined_sequel: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        for kind in EventKind:
            raw = tuple(getattr(self, kind.value))
            refined = tuple(getattr(self, f"refined_{kind.value}"))
            object.__setattr__(self, kind.value, raw)
            object.__setattr__(self, f"refined_{kind.value}", refined)
            if len(raw) > EVENT_CAP:
                raise InvalidInputError(f"{kind.value} has {len(raw)} events, cap is {EVENT_CAP}")
            if refined and len(refined) != len(raw):
                raise InvalidInputError(f"refined {kind.value} length {len(refined)} != {len(raw)}")
        object.__setattr__(self, "warnings", tuple(self.warnings))

    def events(self, kind: EventKind, refined: bool = True) -> tuple[str, ...]:
        kind = EventKind(kind)
        raw = getattr(self, kind.value)
        if refined:
            refined_list = getattr(self, f"refined_{kind.value}")
            if refined_list:
                return refined_list
        return raw

    @property
    def is_complete(self) -> bool:
        return all(getattr(self, k.value) for k in EventKind)

    def to_dict(self) -> dict:
        out = {k.value: list(getattr(self, k.value)) for k in EventKind}
        out.update(
            primary_event=self.primary_event,
            place=self.place,
            time=self.time,
        )
        for k in EventKind:
            out[f"refined_{k.value}"] = list(getattr(self, f"refined_{k.value}"))
        out["warnings"] = list(self.warnings)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "EventDecomposition":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()})


@dataclass(frozen=True, eq=False)
class VideoRecord:
    """A video with its precomputed per-frame embeddings.

    ``frame_embeddings`` is a (frame_count, D) float32 array. Media references
    (``total_frames``, ``frame_ref_template``, ``audio_ref``) are only needed
    when descriptions are generated by the pipeline; ``frame_indices`` is the
    slot for externally chosen frames (e.g. scene-change detection).
    """

    id: str
    frame_embeddings: np.ndarray
    has_audio: bool = False
    total_frames: int | None = None
    frame_ref_template: str | None = None
    audio_ref: str | None = None
    frame_indices: tuple[int, ...] | None = None

    def __post_init__(self):
        emb = np.asarray(self.frame_embeddings, dtype=np.float32)
        if emb.ndim == 1:
            emb = emb.reshape(1, -1)
        if emb.ndim != 2:
            raise InvalidInputError(f"video {self.id!r}: frame embeddings must be 2-D")
        object.__setattr__(self, "frame_embeddings", _frozen_array(emb, np.float32))
        if self.frame_indices is not None:
            object.__setattr__(self, "frame_indices", tuple(int(i) for i in self.frame_indices))

    @property
    def frame_count(self) -> int:
        return int(self.frame_embeddings.shape[0])

    @property
    def dim(self) -> int:
        return int(self.frame_embeddings.shape[1])

    def frame_ref(self, index: int) -> str:
        if self.frame_ref_template is None:
            raise InvalidInputError(f"video {self.id!r} has no frame reference template")
        return self.frame_ref_template.format(video_id=self.id, index=index)

    def _key(self):
        return (
            self.id,
            self.has_audio,
            self.total_frames,
            self.frame_ref_template,
            self.audio_ref,
            self.frame_indices,
        )

    def __eq__(self, other):
        if not isinstance(other, VideoRecord):
            return NotImplemented
        return self._key() == other._key() and np.array_equal(
            self.frame_embeddings, other.frame_embeddings
        )

    def __hash__(self):
        return hash(self._key())


@dataclass(frozen=True)
class DescriptionSet:
    video_id: str
    frame_captions: tuple[str, ...] = ()
    video_caption: str | None = None
    transcript: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "frame_captions", tuple(self.frame_captions))

    def flattened(self) -> list[str]:
        """Frame captions in temporal order, then the video caption, then the transcript.

        Blank entries are skipped.
        """
        items = [c for c in self.frame_captions if c and c.strip()]
        for extra in (self.video_caption, self.transcript):
            if extra and extra.strip():
                items.append(extra)
        return items

    def without_transcript(self) -> "DescriptionSet":
        return DescriptionSet(self.video_id, self.frame_captions, self.video_caption, None)

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "frame_captions": list(self.frame_captions),
            "video_caption": self.video_caption,
            "transcript": self.transcript,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "DescriptionSet":
        return cls(
            video_id=data["video_id"],
            frame_captions=tuple(data.get("frame_captions") or ()),
            video_caption=data.get("video_caption"),
            transcript=data.get("transcript"),
        )


@dataclass(frozen=True, eq=False)
class ScoreComponentMatrix:
    """Per-query score vectors, one row per component, one column per video."""

    query_id: str
    components: Mapping[ComponentKind, np.ndarray]
    video_order: tuple[str, ...]
    errors: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        order = tuple(self.video_order)
        object.__setattr__(self, "video_order", order)
        comps = {}
        for kind in ALL_COMPONENTS:
            if kind not in self.components and kind.value not in self.components:
                continue
            values = self.components.get(kind, self.components.get(kind.value))
            arr = _frozen_array(values, np.float64)
            if arr.shape != (len(order),):
                raise InvalidInputError(
                    f"component {kind.value} has shape {arr.shape}, expected ({len(order)},)"
                )
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"component {kind.value} has non-finite values")
            comps[kind] = arr
        unknown = set(self.components) - set(comps) - {k.value for k in comps}
        if unknown:
            raise InvalidInputError(f"unknown components {sorted(map(str, unknown))}")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "errors", dict(self.errors))

    @property
    def kinds(self) -> tuple[ComponentKind, ...]:
        return tuple(k for k in ALL_COMPONENTS if k in self.components)

    def dropped(self, drop: Iterable[ComponentKind]) -> "ScoreComponentMatrix":
        drop = {ComponentKind(d) for d in drop}
        kept = {k: v for k, v in self.components.items() if k not in drop}
        return ScoreComponentMatrix(self.query_id, kept, self.video_order, self.errors)

    def stacked(self) -> np.ndarray:
        if not self.components:
            return np.zeros((0, len(self.video_order)))
        return np.vstack([self.components[k] for k in self.kinds])

    def __eq__(self, other):
        if not isinstance(other, ScoreComponentMatrix):
            return NotImplemented
        return (
            self.query_id == other.query_id
            and self.video_order == other.video_order
            and self.kinds == other.kinds
            and dict(self.errors) == dict(other.errors)
            and all(np.array_equal(self.components[k], other.components[k]) for k in self.kinds)
        )


@dataclass(frozen=True, eq=False)
class FusedRanking:
    query_id: str
    scores: np.ndarray
    ranking: np.ndarray
    video_order: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "scores", _frozen_array(self.scores, np.float64))
        object.__setattr__(self, "ranking", _frozen_array(self.ranking, np.int64))
        object.__setattr__(self, "video_order", tuple(self.video_order))

    @property
    def ranked_ids(self) -> list[str]:
        return [self.video_order[i] for i in self.ranking]

    @property
    def ranked_scores(self) -> list[float]:
        return [float(self.scores[i]) for i in self.ranking]

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "ranking": self.ranked_ids,
            "scores": self.ranked_scores,
        }


@dataclass(frozen=True)
class RelevanceJudgments:
    """Query id -> relevant video ids, with optional per-query labels."""

    relevant: Mapping[str, frozenset[str]]
    labels: Mapping[str, Mapping[str, str]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "relevant", {q: frozenset(v) for q, v in sorted(self.relevant.items())}
        )
        object.__setattr__(
            self, "labels", {q: dict(v) for q, v in sorted(self.labels.items()) if v}
        )

    def __contains__(self, query_id: str) -> bool:
        return query_id in self.relevant

    def __getitem__(self, query_id: str) -> frozenset[str]:
        return self.relevant[query_id]

    def label(self, query_id: str, key: str) -> str | None:
        return self.labels.get(query_id, {}).get(key)


@dataclass(frozen=True)
class Corpus:
    queries: tuple[QueryRecord, ...]
    videos: tuple[VideoRecord, ...]
    judgments: RelevanceJudgments
    descriptions: Mapping[str, DescriptionSet] | None = None
    dim: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(self.queries))
        object.__setattr__(self, "videos", tuple(self.videos))
        if self.descriptions is not None:
            object.__setattr__(self, "descriptions", dict(self.descriptions))
        if self.dim is None and self.videos:
            object.__setattr__(self, "dim", self.videos[0].dim)

    @property
    def video_ids(self) -> tuple[str, ...]:
        return tuple(v.id for v in self.videos)

    def video(self, video_id: str) -> VideoRecord:
        for v in self.videos:
            if v.id == video_id:
                return v
        raise KeyError(video_id)

    def query(self, query_id: str) -> QueryRecord:
        for q in self.queries:
            if q.id == query_id:
                return q
        raise KeyError(query_id)


@dataclass(frozen=True, order=True)
class Violation:
    kind: str
    subject: str
    message: str

    def __str__(self):
        return f"{self.kind}[{self.subject}]: {self.message}"


def validate_corpus(
    queries: Sequence[QueryRecord],
    videos: Sequence[VideoRecord],
    descriptions: Mapping[str, DescriptionSet] | Sequence[DescriptionSet] | None,
    judgments: RelevanceJudgments,
    dim: int | None = None,
) -> list[Violation]:
    """Check cross-record consistency and return every violation found.

    The result is sorted, so it does not depend on input order.
    """
    out: set[Violation] = set()

    seen_q: set[str] = set()
    for q in queries:
        if q.id in seen_q:
            out.add(Violation("duplicate_query", q.id, "query id appears more than once"))
        seen_q.add(q.id)

    video_ids: set[str] = set()
    for v in videos:
        if v.id in video_ids:
            out.add(Violation("duplicate_video", v.id, "video id appears more than once"))
        video_ids.add(v.id)

    if dim is None:
        dims = sorted({v.dim for v in videos})
        dim = dims[0] if len(dims) == 1 else None
        if len(dims) > 1:
            out.add(Violation("dimension", "*", f"mixed embedding dimensions {dims}"))
    for v in videos:
        if v.frame_count == 0:
            out.add(Violation("empty_embeddings", v.id, "no frame embeddings"))
            continue
        if v.dim == 0:
            out.add(Violation("dimension", v.id, "embedding dimension is 0"))
            continue
        if dim is not None and v.dim != dim:
            out.add(Violation("dimension", v.id, f"dimension {v.dim} != corpus dimension {dim}"))
        norms = np.linalg.norm(v.frame_embeddings.astype(np.float64), axis=1)
        bad = [(i, n) for i, n in enumerate(norms) if not math.isfinite(n) or abs(n - 1.0) > NORM_TOLERANCE]
        if bad:
            detail = ", ".join(f"frame {i} has norm {n:.9g}" for i, n in bad[:5])
            more = f" (+{len(bad) - 5} more)" if len(bad) > 5 else ""
            out.add(Violation("norm", v.id, detail + more))

    if descriptions is not None:
        if not isinstance(descriptions, Mapping):
            descriptions = {d.video_id: d for d in descriptions}
        for vid, desc in descriptions.items():
            if vid not in video_ids:
                out.add(Violation("dangling_description", vid, "description for unknown video"))
            if not desc.flattened():
                out.add(Violation("empty_descriptions", vid, "description set is empty"))
        for vid in video_ids - set(descriptions):
            out.add(Violation("missing_descriptions", vid, "video has no description set"))

    for qid, rel in judgments.relevant.items():
        if qid not in seen_q:
            out.add(Violation("dangling_judgment", qid, "judgment for unknown query"))
        if not rel:
            out.add(Violation("empty_judgment", qid, "no relevant videos"))
        for vid in rel:
            if vid not in video_ids:
                out.add(Violation("dangling_video", vid, f"query {qid} references unknown video {vid}"))

    return sorted(out)
