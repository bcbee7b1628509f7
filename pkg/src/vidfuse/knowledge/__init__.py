"""Adapters for the language, vision and speech models used to build text
descriptions and query decompositions."""

from .agents import (
    AsrLayers,
    DecompositionError,
    Facets,
    Transcript,
    caption_frame,
    caption_frames,
    decompose_events,
    decompose_query,
    extract_facets,
    refine_event,
    summarize_video,
    transcribe_and_refine,
)
from .clients import (
    AsrBackend,
    CallStore,
    ChatBackend,
    ChatEndpointConfig,
    ServiceClient,
    ServiceError,
    Services,
    TranslatorBackend,
)
from .parsing import ResponseFormatError, SectionedResponse, parse_list, parse_sections
from .prompts import PromptTemplate, load_prompt

__all__ = [
    "AsrBackend",
    "AsrLayers",
    "CallStore",
    "ChatBackend",
    "ChatEndpointConfig",
    "DecompositionError",
    "Facets",
    "PromptTemplate",
    "ResponseFormatError",
    "SectionedResponse",
    "ServiceClient",
    "ServiceError",
    "Services",
    "Transcript",
    "TranslatorBackend",
    "caption_frame",
    "caption_frames",
    "decompose_events",
    "decompose_query",
    "extract_facets",
    "load_prompt",
    "parse_list",
    "parse_sections",
    "refine_event",
    "summarize_video",
    "transcribe_and_refine",
]
