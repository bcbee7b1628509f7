"""Parsing of sectioned model responses ("EXPLANATION: ... EVENTS: ...")."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

KNOWN_HEADERS = (
    "EXPLANATION",
    "EVENTS",
    "REFINED QUERY",
    "LOCATION INFORMATION",
    "TEMPORAL INFORMATION",
)

NOT_AVAILABLE = re.compile(r"^\W*not\s+available\W*$", re.IGNORECASE)

_ALT = "|".join(re.escape(h) for h in KNOWN_HEADERS)
# Either at line start in any case, tolerating markdown such as "**Events:**" or
# "## EVENTS:", or mid-line in exact upper case ("EXPLANATION: ... EVENTS: 1. a").
_HEADER_RE = re.compile(
    rf"(?:^[ \t>#*_]*(?i:({_ALT}))|(?<=\s)[*_]*({_ALT}))[ \t*_]*:[ \t*_]*",
    re.MULTILINE,
)
_BULLET_RE = re.compile(r"^\s*(?:\d+\s*[.)]|[-*•])\s+")


class ResponseFormatError(ValueError):
    """Model output does not have the requested structure."""


@dataclass
class SectionedResponse:
    sections: dict[str, str] = field(default_factory=dict)

    def get(self, header: str) -> str | None:
        return self.sections.get(header.upper())

    def __contains__(self, header: str) -> bool:
        return header.upper() in self.sections


def parse_sections(text: str) -> SectionedResponse:
    """Split a response into header -> body.

    Text before the first recognized header is ignored. A header appearing
    twice makes the response ambiguous and raises ``ResponseFormatError``.
    """
    matches = list(_HEADER_RE.finditer(text or ""))
    sections: dict[str, str] = {}
    for i, m in enumerate(matches):
        header = " ".join((m.group(1) or m.group(2)).upper().split())
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        if header in sections:
            raise ResponseFormatError(f"section {header!r} appears more than once")
        sections[header] = text[m.end():end].strip()
    return SectionedResponse(sections)


def parse_list(body: str) -> list[str]:
    """Items of a numbered or bulleted list; "1.", "1)", "-", "*" are accepted.

    Unbulleted non-empty lines count as items too, since models drift from
    the requested format.
    """
    items = []
    for line in (body or "").splitlines():
        line = line.rstrip()
        if not line.strip():
            continue
        # "**1. a**" style emphasis wraps the bullet too
        item = _BULLET_RE.sub("", line.strip().strip("_"), count=1).strip()
        if item.startswith("**"):
            item = _BULLET_RE.sub("", item.strip("*_"), count=1)
        item = item.strip("*_").strip()
        if item:
            items.append(item)
    return items


def is_not_available(body: str | None) -> bool:
    return body is None or not body.strip() or bool(NOT_AVAILABLE.match(body.strip()))


def single_line(body: str | None) -> str | None:
    """First non-empty line of a section body, or None."""
    if body is None:
        return None
    for line in body.splitlines():
        line = line.strip().strip("*_").strip()
        if line:
            return line
    return None
