"""Prompt-driven steps: query decomposition and refinement, frame captions,
video summaries and the ASR -> translator -> refiner transcript chain.

Each step degrades instead of aborting: failures are logged and recorded as
warnings, and the caller gets a documented fallback value.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

from ..model import EVENT_CAP, EventDecomposition, EventKind
from ..similarity import ReplayMissError
from .clients import ServiceClient, ServiceError
from .parsing import ResponseFormatError, is_not_available, parse_list, parse_sections, single_line
from .prompts import load_prompt

logger = logging.getLogger(__name__)


class DecompositionError(RuntimeError):
    """The model never produced a usable EVENTS section."""


def _chat(client: ServiceClient, template: str, inputs: dict, *, stage: str | None = None,
          image: str | None = None, attempt: int = 0, render: dict | None = None) -> str:
    prompt = load_prompt(template)
    text = prompt.render(**(render if render is not None else inputs))
    return client.call(stage or template, prompt.sha256, inputs, (text, image), attempt=attempt)


def decompose_events(query: str, kind: EventKind | str, llm: ServiceClient) -> list[str]:
    """Prequel, current or sequel events for a query, at most five.

    Raises ``DecompositionError`` when no attempt yields an EVENTS list.
    """
    if not query or not query.strip():
        raise ValueError("query text must be non-empty")
    kind = EventKind(kind)
    problem = "no attempts made"
    for attempt in range(llm.max_attempts):
        try:
            raw = _chat(llm, f"decompose_{kind.value}", {"query": query}, attempt=attempt)
            body = parse_sections(raw).get("EVENTS")
        except (ResponseFormatError, ServiceError) as exc:
            problem = str(exc)
            continue
        if body is None:
            problem = "response has no EVENTS section"
            continue
        events = parse_list(body)
        if events:
            return events[:EVENT_CAP]
        problem = "EVENTS section is empty"
    raise DecompositionError(f"{kind.value} decomposition failed for {query!r}: {problem}")


@dataclass
class Facets:
    primary_event: str | None = None
    place: str | None = None
    time: str | None = None
    warnings: list[str] = field(default_factory=list)


_FACET_PROMPTS = (
    ("primary_event", "extract_event", "EVENTS"),
    ("place", "extract_location", "LOCATION INFORMATION"),
    ("time", "extract_time", "TEMPORAL INFORMATION"),
)


def extract_facets(query: str, llm: ServiceClient) -> Facets:
    """Primary event, location and time mentioned in the query; each may be absent."""
    facets = Facets()
    for attr, template, header in _FACET_PROMPTS:
        try:
            raw = _chat(llm, template, {"query": query})
            body = parse_sections(raw).get(header)
        except (ResponseFormatError, ServiceError) as exc:
            facets.warnings.append(f"{attr}: {exc}")
            continue
        if body is None:
            facets.warnings.append(f"{attr}: response has no {header} section")
            continue
        if is_not_available(body):
            continue
        if attr == "primary_event":
            items = [i for i in parse_list(body) if not is_not_available(i)]
            value = ", ".join(items) if items else None
        else:
            value = single_line(body)
        setattr(facets, attr, value)
    return facets


def refine_event(base: str, facets: Facets, llm: ServiceClient,
                 warnings: list[str] | None = None) -> str:
    """Rewrite an event as a natural search query using the facets.

    Absent facets are passed as blanks. Returns ``base`` unchanged when the
    response has no usable REFINED QUERY section.
    """
    inputs = {"base": base, "event": facets.primary_event or "", "place": facets.place or "",
              "time": facets.time or ""}
    try:
        raw = _chat(llm, "refine_query", inputs)
        refined = single_line(parse_sections(raw).get("REFINED QUERY"))
    except (ResponseFormatError, ServiceError) as exc:
        refined = None
        reason = str(exc)
    else:
        reason = "response has no REFINED QUERY section"
    if not refined:
        if warnings is not None:
            warnings.append(f"refine {base!r}: {reason}; kept base")
        logger.warning("refinement of %r failed: %s", base, reason)
        return base
    return refined


def decompose_query(query: str, llm: ServiceClient, *, refine: bool = True) -> EventDecomposition:
    """Full event decomposition of one query.

    A kind whose decomposition fails is left empty and recorded; scoring then
    falls back to the raw query for that kind.
    """
    warnings: list[str] = []
    lists: dict[EventKind, list[str]] = {}
    for kind in EventKind:
        try:
            lists[kind] = decompose_events(query, kind, llm)
        except DecompositionError as exc:
            warnings.append(str(exc))
            logger.warning("%s", exc)
            lists[kind] = []

    facets = Facets()
    refined: dict[EventKind, list[str]] = {k: [] for k in EventKind}
    if refine:
        facets = extract_facets(query, llm)
        warnings.extend(facets.warnings)
        for kind in EventKind:
            refined[kind] = [refine_event(e, facets, llm, warnings) for e in lists[kind]]

    return EventDecomposition(
        prequel=tuple(lists[EventKind.PREQUEL]),
        current=tuple(lists[EventKind.CURRENT]),
        sequel=tuple(lists[EventKind.SEQUEL]),
        primary_event=facets.primary_event,
        place=facets.place,
        time=facets.time,
        refined_prequel=tuple(refined[EventKind.PREQUEL]),
        refined_current=tuple(refined[EventKind.CURRENT]),
        refined_sequel=tuple(refined[EventKind.SEQUEL]),
        warnings=tuple(warnings),
    )


# -- video ------------------------------------------------------------------------

IMAGE_SLOT = "<image>"


def caption_frame(frame_ref: str, prev_caption: str | None, asr_context: str | None,
                  vlm: ServiceClient) -> str:
    """Caption one frame given the previous frame's caption.

    Uses the ASR prompt variant when ``asr_context`` is given. Returns ""
    when the endpoint keeps failing.
    """
    inputs = {"frame": frame_ref, "prev_caption": prev_caption or ""}
    template = "frame_caption"
    if asr_context is not None:
        inputs["asr"] = asr_context
        template = "frame_caption_asr"
    render = dict(inputs, frame=IMAGE_SLOT)
    try:
        return _chat(vlm, template, inputs, image=frame_ref, render=render).strip()
    except ServiceError as exc:
        logger.warning("caption for %s missing: %s", frame_ref, exc)
        return ""


def caption_frames(frame_refs: Sequence[str], asr_context: str | None, vlm: ServiceClient) -> list[str]:
    """Caption frames in order, each conditioned on its predecessor's caption."""
    captions = []
    prev = None
    for ref in frame_refs:
        cap = caption_frame(ref, prev, asr_context, vlm)
        captions.append(cap)
        if cap:
            prev = cap
    return captions


def format_frame_descriptions(captions: Sequence[str]) -> str:
    return "\n\n".join(f"## Frame {i} Description\n\n{c}" for i, c in enumerate(captions, 1))


def summarize_video(frame_captions: Sequence[str], asr: str | None, llm: ServiceClient) -> str | None:
    """One summary caption for the whole video from its ordered frame captions."""
    captions = [c for c in frame_captions if c]
    if not captions:
        raise ValueError("summarize_video needs at least one frame caption")
    inputs = {"frame_descriptions": format_frame_descriptions(captions)}
    template = "video_caption"
    if asr is not None:
        inputs["asr"] = asr
        template = "video_caption_asr"
    try:
        return _chat(llm, template, inputs).strip() or None
    except ServiceError as exc:
        logger.warning("video summary missing: %s", exc)
        return None


# -- audio ------------------------------------------------------------------------

@dataclass(frozen=True)
class AsrLayers:
    """Which stages of the audio chain run.

    ``asr_translation`` controls the ASR model's own English output; the
    transcription itself always runs while any layer is on.
    """

    asr_translation: bool = True
    translator: bool = True
    refiner: bool = True

    @property
    def any(self) -> bool:
        return self.asr_translation or self.translator or self.refiner


@dataclass
class Transcript:
    original: str | None = None
    language: str | None = None
    asr_english: str | None = None
    translated: str | None = None
    refined: str | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def text(self) -> str | None:
        """The English transcript used as a description, or None."""
        return self.refined

    def to_dict(self) -> dict:
        return {
            "original": self.original,
            "language": self.language,
            "asr_english": self.asr_english,
            "translated": self.translated,
            "refined": self.refined,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data) -> "Transcript":
        return cls(**data)


def format_translations(translations: Sequence[str]) -> str:
    return "\n\n".join(f"## Translation {i}:\n\n{t}" for i, t in enumerate(translations, 1))


def transcribe_and_refine(audio_ref: str | None, asr: ServiceClient, translator: ServiceClient,
                          refiner: ServiceClient, layers: AsrLayers = AsrLayers()) -> Transcript:
    """Run the three-agent audio chain.

    The refiner merges whichever English candidates are enabled, checked
    against the original-language text. Without the refiner the first
    available English candidate is used. A "Not Available" answer, an ASR
    failure or a missing audio track all yield ``refined=None``.
    """
    out = Transcript()
    if audio_ref is None or not layers.any:
        return out
    try:
        raw = asr.call("asr", "", {"audio": audio_ref}, audio_ref)
        data = json.loads(raw)
    except (ServiceError, ValueError) as exc:
        out.warnings.append(f"asr failed: {exc}")
        logger.warning("ASR failed for %s: %s", audio_ref, exc)
        return out
    out.original = (data.get("original_text") or "").strip() or None
    out.language = data.get("language")
    if out.original is None:
        return out
    if layers.asr_translation:
        out.asr_english = (data.get("english_text") or "").strip() or None
    if layers.translator:
        try:
            out.translated = translator.call("translate", "", {"text": out.original}, out.original).strip() or None
        except ServiceError as exc:
            out.warnings.append(f"translator failed: {exc}")

    candidates = [t for t in (out.asr_english, out.translated) if t]
    if not layers.refiner:
        out.refined = candidates[0] if candidates else None
        return out
    inputs = {"original": out.original, "translations": format_translations(candidates)}
    try:
        merged = _chat(refiner, "refine_transcript", inputs).strip()
    except ServiceError as exc:
        out.warnings.append(f"refiner failed: {exc}")
        merged = candidates[0] if candidates else ""
    out.refined = None if is_not_available(merged) else merged
    return out


__all__ = [
    "AsrLayers",
    "DecompositionError",
    "Facets",
    "ReplayMissError",
    "Transcript",
    "caption_frame",
    "caption_frames",
    "decompose_events",
    "decompose_query",
    "extract_facets",
    "refine_event",
    "summarize_video",
    "transcribe_and_refine",
]
