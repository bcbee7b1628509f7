"""Per-query score components over the video corpus.

Five components are produced for every (query, video) pair: the 0-100
query/video embedding score, the best MaxSim between the raw query and any
description, and for each of prequel/current/sequel the aggregated MaxSim
between event strings and descriptions.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus_io import dumps
from .model import (
    ALL_COMPONENTS,
    ComponentKind,
    DescriptionSet,
    EventDecomposition,
    EventKind,
    InvalidInputError,
    QueryRecord,
    ScoreComponentMatrix,
    VideoRecord,
)
from .similarity import EmbeddingProvider, late_interaction_sim, query_video_score

logger = logging.getLogger(__name__)

# Cell values used for a video whose component cannot be computed.
TEXT_FLOOR = -1.0
VIDEO_FLOOR = -100.0


@dataclass(frozen=True)
class Aggregator:
    """``max``, ``mean`` or ``mean_top{k}``."""

    mode: str = "max"
    k: int | None = None

    def __post_init__(self):
        if self.mode not in ("max", "mean", "mean_top"):
            raise InvalidInputError(f"unknown aggregator {self.mode!r}")
        if self.mode == "mean_top" and (self.k is None or self.k < 1):
            raise InvalidInputError("mean_top needs k >= 1")

    @classmethod
    def parse(cls, spec: "str | Aggregator") -> "Aggregator":
        if isinstance(spec, Aggregator):
            return spec
        s = spec.strip().lower().replace("-", "_")
        m = re.fullmatch(r"mean_?top_?(\d+)", s)
        if m:
            return cls("mean_top", int(m.group(1)))
        return cls(s)

    def __call__(self, values: Sequence[float]) -> float:
        arr = np.asarray(values, dtype=np.float64)
        if arr.size == 0:
            raise InvalidInputError("cannot aggregate an empty list")
        if self.mode == "max":
            return float(arr.max())
        if self.mode == "mean":
            return float(arr.mean())
        # fewer than k items: average whatever is there
        top = np.sort(arr)[::-1][: self.k]
        return float(top.mean())

    def __str__(self):
        return f"mean_top{self.k}" if self.mode == "mean_top" else self.mode


@dataclass(frozen=True)
class AggregationPolicy:
    over_events: Aggregator = Aggregator()
    over_captions: Aggregator = Aggregator()

    @classmethod
    def parse(cls, over_events="max", over_captions="max") -> "AggregationPolicy":
        return cls(Aggregator.parse(over_events), Aggregator.parse(over_captions))

    def to_dict(self) -> dict:
        return {"over_events": str(self.over_events), "over_captions": str(self.over_captions)}


DEFAULT_POLICY = AggregationPolicy()


def _description_embeddings(descs: DescriptionSet, provider: EmbeddingProvider):
    items = descs.flattened()
    if not items:
        raise InvalidInputError(f"video {descs.video_id!r} has no descriptions")
    return [provider.embed_text(c) for c in items]


def score_query_vs_descriptions(query: QueryRecord | str, descs: DescriptionSet,
                                provider: EmbeddingProvider) -> float:
    text = query.text if isinstance(query, QueryRecord) else query
    q = provider.embed_text(text)
    return max(late_interaction_sim(q, d) for d in _description_embeddings(descs, provider))


def score_events_vs_descriptions(events: Sequence[str], descs: DescriptionSet,
                                 policy: AggregationPolicy, provider: EmbeddingProvider) -> float:
    """Aggregate MaxSim over captions for each event, then over events.

    With the default (max, max) policy this is the global maximum over all
    event/description pairs, so adding a weak event never moves the score.
    """
    if not events:
        raise InvalidInputError("no events to score")
    caps = _description_embeddings(descs, provider)
    per_event = []
    for ev in events:
        e = provider.embed_text(ev)
        per_event.append(policy.over_captions([late_interaction_sim(e, c) for c in caps]))
    return policy.over_events(per_event)


def build_score_matrix(
    query: QueryRecord,
    decomposition: EventDecomposition | None,
    videos: Sequence[VideoRecord],
    descriptions: Mapping[str, DescriptionSet],
    provider: EmbeddingProvider,
    policy: AggregationPolicy = DEFAULT_POLICY,
    *,
    use_refined_events: bool = True,
    workers: int = 1,
) -> ScoreComponentMatrix:
    """Compute all five component vectors for one query.

    Videos whose descriptions are missing or empty get floor values in the
    text components and an entry in ``errors``; the matrix stays finite.
    An event kind with no events falls back to the raw query text.
    """
    event_lists: dict[EventKind, tuple[str, ...]] = {}
    for kind in EventKind:
        events = decomposition.events(kind, use_refined_events) if decomposition else ()
        event_lists[kind] = tuple(events) if events else (query.text,)

    q_sentence = provider.embed_query_sentence(query.text)

    def cell(video: VideoRecord):
        errors = []
        row = {}
        try:
            row[ComponentKind.QUERY_VIDEO] = query_video_score(q_sentence, video)
        except InvalidInputError as exc:
            errors.append(f"query_video: {exc}")
            row[ComponentKind.QUERY_VIDEO] = VIDEO_FLOOR
        desc = descriptions.get(video.id)
        if desc is None or not desc.flattened():
            errors.append("no descriptions")
            for kind in ALL_COMPONENTS[1:]:
                row[kind] = TEXT_FLOOR
        else:
            row[ComponentKind.QUERY_DESC] = score_query_vs_descriptions(query, desc, provider)
            for kind in EventKind:
                row[ComponentKind.for_event(kind)] = score_events_vs_descriptions(
                    event_lists[kind], desc, policy, provider
                )
        return row, errors

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(cell, videos))
    else:
        cells = [cell(v) for v in videos]

    components = {k: np.array([row[k] for row, _ in cells]) for k in ALL_COMPONENTS}
    errors = {v.id: "; ".join(errs) for v, (_, errs) in zip(videos, cells) if errs}
    for vid, msg in errors.items():
        logger.warning("query %s, video %s: %s", query.id, vid, msg)
    matrix = ScoreComponentMatrix(query.id, components, tuple(v.id for v in videos), errors)
    if len(matrix.kinds) != len(ALL_COMPONENTS):
        raise InvalidInputError(f"query {query.id}: missing component vectors")
    return matrix


# -- persistence ---------------------------------------------------------------

def save_matrix(matrix: ScoreComponentMatrix, stem: str | Path) -> tuple[Path, Path]:
    """Write ``<stem>.bin`` (component-major little-endian float64) and ``<stem>.json``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    bin_path = stem.with_suffix(".bin")
    idx_path = stem.with_suffix(".json")
    bin_path.write_bytes(np.ascontiguousarray(matrix.stacked(), dtype="<f8").tobytes())
    index = {
        "query_id": matrix.query_id,
        "components": [k.value for k in matrix.kinds],
        "video_order": list(matrix.video_order),
        "errors": dict(sorted(matrix.errors.items())),
        "dtype": "<f8",
        "layout": "component-major",
    }
    idx_path.write_text(dumps(index) + "\n", encoding="utf-8")
    return bin_path, idx_path


def load_matrix(stem: str | Path) -> ScoreComponentMatrix:
    stem = Path(stem)
    index = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
    n_comp, n_vid = len(index["components"]), len(index["video_order"])
    data = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    if data.size != n_comp * n_vid:
        raise InvalidInputError(f"{stem}: expected {n_comp * n_vid} values, found {data.size}")
    data = data.reshape(n_comp, n_vid)
    comps = {ComponentKind(name): data[i] for i, name in enumerate(index["components"])}
    return ScoreComponentMatrix(index["query_id"], comps, index["video_order"], index.get("errors", {}))


def matrix_to_tsv(matrix: ScoreComponentMatrix) -> str:
    kinds = matrix.kinds
    lines = ["\t".join(["video_id", *(k.value for k in kinds)])]
    for j, vid in enumerate(matrix.video_order):
        lines.append("\t".join([vid, *(f"{matrix.components[k][j]:.6f}" for k in kinds)]))
    return "\n".join(lines) + "\n"
